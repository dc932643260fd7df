#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace dvdet {

/// Forward-mode dual scalar carrying N partial derivatives.
template <std::size_t N>
struct Dual {
  double val = 0.0;
  std::array<double, N> grad{};

  constexpr Dual() = default;
  constexpr Dual(double v) : val(v) {}  // NOLINT: implicit promotion of constants
  constexpr Dual(double v, const std::array<double, N>& g) : val(v), grad(g) {}

  /// Independent variable number `index` of the seed.
  static constexpr Dual variable(double v, std::size_t index) {
    Dual d(v);
    d.grad[index] = 1.0;
    return d;
  }

  Dual& operator+=(const Dual& o) {
    val += o.val;
    for (std::size_t i = 0; i < N; ++i) grad[i] += o.grad[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    val -= o.val;
    for (std::size_t i = 0; i < N; ++i) grad[i] -= o.grad[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (std::size_t i = 0; i < N; ++i) grad[i] = grad[i] * o.val + val * o.grad[i];
    val *= o.val;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.val;
    for (std::size_t i = 0; i < N; ++i) grad[i] = (grad[i] - val * inv * o.grad[i]) * inv;
    // Exact division keeps the value bit-identical to the plain double path.
    val /= o.val;
    return *this;
  }
};

template <std::size_t N>
Dual<N> operator-(Dual<N> a) {
  a.val = -a.val;
  for (auto& g : a.grad) g = -g;
  return a;
}

template <std::size_t N>
Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <std::size_t N>
Dual<N> operator+(Dual<N> a, double b) { return a += Dual<N>(b); }
template <std::size_t N>
Dual<N> operator+(double a, Dual<N> b) { return b += Dual<N>(a); }

template <std::size_t N>
Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <std::size_t N>
Dual<N> operator-(Dual<N> a, double b) { return a -= Dual<N>(b); }
template <std::size_t N>
Dual<N> operator-(double a, const Dual<N>& b) { return Dual<N>(a) -= b; }

template <std::size_t N>
Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <std::size_t N>
Dual<N> operator*(Dual<N> a, double b) {
  a.val *= b;
  for (auto& g : a.grad) g *= b;
  return a;
}
template <std::size_t N>
Dual<N> operator*(double a, Dual<N> b) { return b * a; }

template <std::size_t N>
Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <std::size_t N>
Dual<N> operator/(Dual<N> a, double b) {
  a.val /= b;
  for (auto& g : a.grad) g /= b;
  return a;
}
template <std::size_t N>
Dual<N> operator/(double a, const Dual<N>& b) { return Dual<N>(a) /= b; }

namespace detail {
template <std::size_t N>
Dual<N> chain(const Dual<N>& a, double value, double derivative) {
  Dual<N> out(value);
  for (std::size_t i = 0; i < N; ++i) out.grad[i] = derivative * a.grad[i];
  return out;
}
}  // namespace detail

template <std::size_t N>
Dual<N> sin(const Dual<N>& a) { return detail::chain(a, std::sin(a.val), std::cos(a.val)); }
template <std::size_t N>
Dual<N> cos(const Dual<N>& a) { return detail::chain(a, std::cos(a.val), -std::sin(a.val)); }
template <std::size_t N>
Dual<N> exp(const Dual<N>& a) {
  const double e = std::exp(a.val);
  return detail::chain(a, e, e);
}
template <std::size_t N>
Dual<N> log(const Dual<N>& a) { return detail::chain(a, std::log(a.val), 1.0 / a.val); }
template <std::size_t N>
Dual<N> sqrt(const Dual<N>& a) {
  const double s = std::sqrt(a.val);
  return detail::chain(a, s, 0.5 / s);
}
// abs at 0 takes the +1 branch.
template <std::size_t N>
Dual<N> abs(const Dual<N>& a) { return a.val < 0.0 ? -a : a; }

// min/max pick a branch on the primal value; ties resolve to the first argument.
template <std::size_t N>
Dual<N> min(const Dual<N>& a, const Dual<N>& b) { return b.val < a.val ? b : a; }
template <std::size_t N>
Dual<N> max(const Dual<N>& a, const Dual<N>& b) { return b.val > a.val ? b : a; }

/// Primal value of a plain or dual scalar.
inline double value(double v) { return v; }
template <std::size_t N>
double value(const Dual<N>& d) { return d.val; }

}  // namespace dvdet

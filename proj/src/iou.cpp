#include "dvdet/iou.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "dvdet/dual.hpp"
#include "dvdet/parallel.hpp"

namespace dvdet {

namespace {

constexpr double kInsideTol = 1e-7;
constexpr double kMergeTol = 1e-7;
constexpr double kTieTol = 1e-6;
constexpr double kMinArea = 1e-12;
constexpr double kParallelTol = 1e-12;

using std::abs;
using std::cos;
using std::sin;

inline double dmax(double a, double b) { return std::max(a, b); }
inline double dmin(double a, double b) { return std::min(a, b); }
template <std::size_t N>
Dual<N> dmax(const Dual<N>& a, const Dual<N>& b) { return max(a, b); }
template <std::size_t N>
Dual<N> dmin(const Dual<N>& a, const Dual<N>& b) { return min(a, b); }

template <typename T>
struct Box {
  T x, y, z, w, l, h, r;
};

template <typename T>
struct Pt {
  T x, y;
};

Box<double> box_of(const OrientedBox& b) {
  return {b.x(), b.y(), b.z(), b.w(), b.l(), b.h(), b.r()};
}

template <std::size_t N>
Box<Dual<N>> seeded_box(const OrientedBox& b, std::size_t first) {
  using D = Dual<N>;
  return {D::variable(b.x(), first),     D::variable(b.y(), first + 1),
          D::variable(b.z(), first + 2), D::variable(b.w(), first + 3),
          D::variable(b.l(), first + 4), D::variable(b.h(), first + 5),
          D::variable(b.r(), first + 6)};
}

// Local corners counterclockwise from (-w/2, +l/2).
template <typename T>
std::array<Pt<T>, 4> local_corners(const Box<T>& b) {
  const T hw = b.w * 0.5;
  const T hl = b.l * 0.5;
  return {{{-hw, hl}, {-hw, -hl}, {hw, -hl}, {hw, hl}}};
}

// Rigid change of frame between two boxes' local BEV coordinates.
template <typename T>
class FrameMap {
 public:
  FrameMap(const Box<T>& src, const Box<T>& dst)
      : cs_(cos(src.r)), ss_(sin(src.r)), cd_(cos(dst.r)), sd_(sin(dst.r)),
        ox_(src.x - dst.x), oy_(src.y - dst.y) {}

  Pt<T> operator()(const Pt<T>& p) const {
    // world offset from the dst center, then rotate by -r_dst.
    const T wx = cs_ * p.x - ss_ * p.y + ox_;
    const T wy = ss_ * p.x + cs_ * p.y + oy_;
    return {cd_ * wx + sd_ * wy, cd_ * wy - sd_ * wx};
  }

 private:
  T cs_, ss_, cd_, sd_, ox_, oy_;
};

// Signed distance-like margin of a point to a centered rectangle: <= 0 inside.
double rect_margin(double x, double y, double hw, double hl) {
  return std::max(std::abs(x) - hw, std::abs(y) - hl);
}

template <typename T>
struct Evaluation {
  T iou;
  T area;
  T height;
  std::vector<Pt<T>> polygon;  // frame of g
  bool smooth = true;
};

template <typename T>
Evaluation<T> evaluate(const Box<T>& p, const Box<T>& g) {
  Evaluation<T> ev{T(0.0), T(0.0), T(0.0), {}, true};

  const FrameMap<T> p_to_g(p, g);
  const FrameMap<T> g_to_p(g, p);
  const double hwg = value(g.w) * 0.5;
  const double hlg = value(g.l) * 0.5;
  const double hwp = value(p.w) * 0.5;
  const double hlp = value(p.l) * 0.5;

  // Fixed 24-slot candidate buffer: p corners in g's frame, g corners, edge/line intersections.
  struct Candidate {
    Pt<T> pt;
    bool alive = false;
  };
  std::array<Candidate, 24> cand{};
  std::size_t n = 0;

  const auto pc = local_corners(p);
  std::array<Pt<T>, 4> pg;
  for (std::size_t i = 0; i < 4; ++i) pg[i] = p_to_g(pc[i]);

  // p corners are inside p by construction; only g's bounds decide.
  for (std::size_t i = 0; i < 4; ++i) {
    const double m = rect_margin(value(pg[i].x), value(pg[i].y), hwg, hlg);
    if (std::abs(m) < kTieTol) ev.smooth = false;
    cand[n++] = {pg[i], m <= kInsideTol};
  }
  // g corners are inside g by construction; test against p in p's frame.
  const auto gc = local_corners(g);
  for (std::size_t i = 0; i < 4; ++i) {
    const Pt<T> q = g_to_p(gc[i]);
    const double m = rect_margin(value(q.x), value(q.y), hwp, hlp);
    if (std::abs(m) < kTieTol) ev.smooth = false;
    cand[n++] = {gc[i], m <= kInsideTol};
  }
  // Edges of p against the four boundary lines of g. Each hit lies on p's edge and on g's line,
  // so survival reduces to the edge parameter in [0, 1] and the free coordinate within g.
  const std::array<T, 2> x_lines{g.w * 0.5, g.w * -0.5};
  const std::array<T, 2> y_lines{g.l * 0.5, g.l * -0.5};
  for (std::size_t e = 0; e < 4; ++e) {
    const Pt<T>& a = pg[e];
    const Pt<T>& b = pg[(e + 1) % 4];
    const T dx = b.x - a.x;
    const T dy = b.y - a.y;
    for (const T& X : x_lines) {
      if (std::abs(value(dx)) < kParallelTol) {
        cand[n++] = {};
        continue;
      }
      const T t = (X - a.x) / dx;
      const Pt<T> hit{X, a.y + t * dy};
      const double tv = value(t);
      const double m = std::abs(value(hit.y)) - hlg;
      if (std::abs(tv) < kTieTol || std::abs(tv - 1.0) < kTieTol) ev.smooth = false;
      if (tv >= 0.0 && tv <= 1.0 && std::abs(m) < kTieTol) ev.smooth = false;
      cand[n++] = {hit, tv >= 0.0 && tv <= 1.0 && m <= kInsideTol};
    }
    for (const T& Y : y_lines) {
      if (std::abs(value(dy)) < kParallelTol) {
        cand[n++] = {};
        continue;
      }
      const T t = (Y - a.y) / dy;
      const Pt<T> hit{a.x + t * dx, Y};
      const double tv = value(t);
      const double m = std::abs(value(hit.x)) - hwg;
      if (std::abs(tv) < kTieTol || std::abs(tv - 1.0) < kTieTol) ev.smooth = false;
      if (tv >= 0.0 && tv <= 1.0 && std::abs(m) < kTieTol) ev.smooth = false;
      cand[n++] = {hit, tv >= 0.0 && tv <= 1.0 && m <= kInsideTol};
    }
  }

  // Merge duplicates, keeping the earliest slot (corners before intersections).
  std::vector<Pt<T>> kept;
  kept.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!cand[i].alive) continue;
    const double x = value(cand[i].pt.x);
    const double y = value(cand[i].pt.y);
    bool duplicate = false;
    for (const Pt<T>& k : kept) {
      const double d = std::hypot(value(k.x) - x, value(k.y) - y);
      if (d <= kMergeTol) {
        duplicate = true;
        break;
      }
      if (d < kTieTol) ev.smooth = false;
    }
    if (duplicate) {
      ev.smooth = false;
    } else {
      kept.push_back(cand[i].pt);
    }
  }

  if (kept.size() >= 3) {
    double cx = 0.0;
    double cy = 0.0;
    for (const Pt<T>& k : kept) {
      cx += value(k.x);
      cy += value(k.y);
    }
    cx /= static_cast<double>(kept.size());
    cy /= static_cast<double>(kept.size());
    std::vector<std::pair<std::pair<double, double>, std::size_t>> order;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const double ux = value(kept[i].x) - cx;
      const double uy = value(kept[i].y) - cy;
      order.push_back({{std::atan2(uy, ux), std::hypot(ux, uy)}, i});
    }
    std::sort(order.begin(), order.end());
    for (const auto& o : order) ev.polygon.push_back(kept[o.second]);

    T twice(0.0);
    const std::size_t m = ev.polygon.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Pt<T>& u = ev.polygon[i];
      const Pt<T>& v = ev.polygon[(i + 1) % m];
      twice += u.x * v.y - v.x * u.y;
    }
    ev.area = abs(twice) * 0.5;
  }
  if (value(ev.area) < kMinArea) {
    ev.area = T(0.0);
    ev.polygon.clear();
  }

  const T top_p = p.z + p.h * 0.5;
  const T top_g = g.z + g.h * 0.5;
  const T bottom_p = p.z - p.h * 0.5;
  const T bottom_g = g.z - g.h * 0.5;
  if (std::abs(value(top_p) - value(top_g)) < kTieTol ||
      std::abs(value(bottom_p) - value(bottom_g)) < kTieTol) {
    ev.smooth = false;
  }
  const T span = dmin(top_p, top_g) - dmax(bottom_p, bottom_g);
  if (std::abs(value(span)) < kTieTol) ev.smooth = false;
  ev.height = dmax(span, T(0.0));

  const T inter = ev.area * ev.height;
  const T uni = p.w * p.l * p.h + g.w * g.l * g.h - inter;
  ev.iou = inter / uni;
  return ev;
}

IouResult to_result(const Evaluation<double>& ev) {
  IouResult r;
  r.iou3d = std::clamp(ev.iou, 0.0, 1.0);
  r.loss = 1.0 - r.iou3d;
  r.bev_area = ev.area;
  r.height_overlap = ev.height;
  for (const auto& p : ev.polygon) r.polygon.push_back({p.x, p.y});
  r.smooth = ev.smooth;
  return r;
}

}  // namespace

std::vector<Vec2> to_frame(std::span<const Vec2> points, const OrientedBox& src,
                           const OrientedBox& dst) {
  const FrameMap<double> map(box_of(src), box_of(dst));
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const Vec2& v : points) {
    const Pt<double> q = map({v.x, v.y});
    out.push_back({q.x, q.y});
  }
  return out;
}

std::vector<Vec2> bev_intersection_polygon(const OrientedBox& bp, const OrientedBox& bg) {
  return to_result(evaluate(box_of(bp), box_of(bg))).polygon;
}

double shoelace_area(std::span<const Vec2> vertices) {
  const std::size_t n = vertices.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = vertices[i];
    const Vec2& b = vertices[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(twice);
}

IouResult iou3d(const OrientedBox& bp, const OrientedBox& bg) {
  return to_result(evaluate(box_of(bp), box_of(bg)));
}

IouGradient iou3d_grad(const OrientedBox& bp, const OrientedBox& bg) {
  using D = Dual<14>;
  const Evaluation<D> ev = evaluate(seeded_box<14>(bp, 0), seeded_box<14>(bg, 7));
  IouGradient out;
  out.iou3d = std::clamp(ev.iou.val, 0.0, 1.0);
  out.loss = 1.0 - out.iou3d;
  for (std::size_t i = 0; i < 14; ++i) out.grad[i] = -ev.iou.grad[i];
  out.smooth = ev.smooth;
  return out;
}

std::vector<IouResult> iou3d_batch(std::span<const BoxPair> pairs, unsigned threads) {
  std::vector<IouResult> out(pairs.size());
  parallel_for(pairs.size(), threads,
               [&](std::size_t i) { out[i] = iou3d(pairs[i].first, pairs[i].second); });
  return out;
}

std::vector<IouGradient> iou3d_grad_batch(std::span<const BoxPair> pairs, unsigned threads) {
  std::vector<IouGradient> out(pairs.size());
  parallel_for(pairs.size(), threads,
               [&](std::size_t i) { out[i] = iou3d_grad(pairs[i].first, pairs[i].second); });
  return out;
}

}  // namespace dvdet

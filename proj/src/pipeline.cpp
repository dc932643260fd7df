#include "dvdet/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "dvdet/losses.hpp"
#include "dvdet/parallel.hpp"
#include "dvdet/random.hpp"
#include "dvdet/voxelization.hpp"
#include "dvdet/wire.hpp"

namespace dvdet {

Extents kitti_crop() { return Extents{Point3(0.0, -40.0, -3.0), 70.0, 80.0, 4.0}; }

PipelineConfig::PipelineConfig() { backbone.sampling.extents = kitti_crop(); }

void PipelineConfig::set_threads(unsigned t) {
  backbone.threads = std::max(1u, t);
  backbone.sampling.threads = backbone.threads;
}

void PipelineConfig::validate() const {
  backbone.validate();
  roi.validate();
  for (const std::size_t w : proposal_hidden) {
    if (w == 0) throw std::invalid_argument("PipelineConfig: zero proposal head width");
  }
  if (refine_conv1 == 0 || refine_conv2 == 0 || refine_hidden == 0) {
    throw std::invalid_argument("PipelineConfig: zero refine head width");
  }
  if (roi.k != 5) {
    // Two valid 3x3x3 convolutions only reach 1x1x1 from a 5x5x5 grid.
    throw std::invalid_argument("PipelineConfig: roi.grid must be 5 for the refine head");
  }
  for (const double a : anchor) {
    if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("PipelineConfig: bad anchor");
  }
}

// ---------------------------------------------------------------------------
// Config text

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

struct LineContext {
  std::size_t line;
  std::size_t offset;
  std::string key;

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError("config line " + std::to_string(line) + " (" + key + "): " + why, offset);
  }
};

double to_double(const std::string& s, const LineContext& ctx) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    ctx.fail("expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& s, const LineContext& ctx) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    ctx.fail("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& s, const LineContext& ctx) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  ctx.fail("expected true or false, got '" + s + "'");
}

std::vector<double> to_doubles(const std::string& s, const LineContext& ctx) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(to_double(item, ctx));
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& s, const LineContext& ctx) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) out.push_back(to_uint(item, ctx));
  return out;
}

// Per-block lists may have any length; the block count follows the longest list given.
void resize_blocks(std::vector<BlockSpec>& blocks, std::size_t n) {
  if (n == 0) throw std::invalid_argument("config: empty block list");
  const BlockSpec last = blocks.empty() ? BlockSpec{} : blocks.back();
  blocks.resize(n, last);
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? ", " : "") << values[i];
  return out.str();
}

}  // namespace

PipelineConfig parse_config(std::istream& in) {
  PipelineConfig cfg;
  std::string raw;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::size_t line_offset = offset;
    offset += raw.size() + 1;
    std::string line = raw.substr(0, raw.find('#'));
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    LineContext ctx{line_no, line_offset, trim(line.substr(0, eq))};
    if (eq == std::string::npos) ctx.fail("missing '='");
    const std::string value = trim(line.substr(eq + 1));
    const std::string& key = ctx.key;
    auto& blocks = cfg.backbone.blocks;

    try {
      if (key == "blocks.resolution") {
        const auto v = to_doubles(value, ctx);
        resize_blocks(blocks, v.size());
        for (std::size_t b = 0; b < v.size(); ++b) blocks[b].resolution = v[b];
      } else if (key == "blocks.radius") {
        const auto v = to_doubles(value, ctx);
        resize_blocks(blocks, v.size());
        for (std::size_t b = 0; b < v.size(); ++b) blocks[b].radius = v[b];
      } else if (key == "blocks.channels") {
        const auto v = to_sizes(value, ctx);
        resize_blocks(blocks, v.size());
        for (std::size_t b = 0; b < v.size(); ++b) blocks[b].channels = v[b];
      } else if (key == "blocks.k") {
        const auto v = to_sizes(value, ctx);
        resize_blocks(blocks, v.size());
        for (std::size_t b = 0; b < v.size(); ++b) blocks[b].k = v[b];
      } else if (key == "blocks.layers") {
        const auto v = to_sizes(value, ctx);
        resize_blocks(blocks, v.size());
        for (std::size_t b = 0; b < v.size(); ++b) blocks[b].layers = v[b];
      } else if (key == "crop.min") {
        const auto v = to_doubles(value, ctx);
        if (v.size() != 3) ctx.fail("expected three values");
        Extents e = cfg.backbone.sampling.extents.value_or(kitti_crop());
        e.min = Point3(v[0], v[1], v[2]);
        cfg.backbone.sampling.extents = e;
      } else if (key == "crop.size") {
        const auto v = to_doubles(value, ctx);
        if (v.size() != 3) ctx.fail("expected three values");
        if (!(v[0] > 0.0 && v[1] > 0.0 && v[2] > 0.0)) ctx.fail("sizes must be positive");
        Extents e = cfg.backbone.sampling.extents.value_or(kitti_crop());
        e.size_x = v[0];
        e.size_y = v[1];
        e.size_z = v[2];
        cfg.backbone.sampling.extents = e;
      } else if (key == "crop.enabled") {
        if (to_bool(value, ctx)) {
          if (!cfg.backbone.sampling.extents) cfg.backbone.sampling.extents = kitti_crop();
        } else {
          cfg.backbone.sampling.extents.reset();
        }
      } else if (key == "sampling.strategy") {
        if (value == "grid_buffer") {
          cfg.backbone.sampling.strategy = SamplingStrategy::GridBuffer;
        } else if (value == "sort_unique") {
          cfg.backbone.sampling.strategy = SamplingStrategy::SortUnique;
        } else {
          ctx.fail("expected grid_buffer or sort_unique");
        }
      } else if (key == "sampling.seed") {
        cfg.backbone.sampling.seed = to_uint(value, ctx);
      } else if (key == "sampling.max_buffer_slots") {
        cfg.backbone.sampling.max_buffer_slots = to_uint(value, ctx);
      } else if (key == "deterministic") {
        cfg.backbone.sampling.deterministic = to_bool(value, ctx);
      } else if (key == "threads") {
        cfg.set_threads(static_cast<unsigned>(to_uint(value, ctx)));
      } else if (key == "voxel.profile") {
        if (value == "dense") {
          cfg.backbone.profile = VoxelizeProfile::Dense;
        } else if (value == "compact") {
          cfg.backbone.profile = VoxelizeProfile::Compact;
        } else {
          ctx.fail("expected dense or compact");
        }
      } else if (key == "voxel.append_offsets") {
        cfg.backbone.append_offsets = to_bool(value, ctx);
      } else if (key == "activation") {
        if (value == "relu") {
          cfg.backbone.activation = Activation::ReLU;
        } else if (value == "identity") {
          cfg.backbone.activation = Activation::Identity;
        } else {
          ctx.fail("expected relu or identity");
        }
      } else if (key == "roi.grid") {
        cfg.roi.k = to_uint(value, ctx);
      } else if (key == "roi.n_max") {
        cfg.roi.n_max = to_uint(value, ctx);
      } else if (key == "head.hidden") {
        cfg.proposal_hidden = to_sizes(value, ctx);
      } else if (key == "head.anchor") {
        const auto v = to_doubles(value, ctx);
        if (v.size() != 3) ctx.fail("expected three values");
        cfg.anchor = {v[0], v[1], v[2]};
      } else if (key == "stage2.top_k") {
        cfg.stage2_top_k = to_uint(value, ctx);
      } else if (key == "refine.channels") {
        const auto v = to_sizes(value, ctx);
        if (v.size() != 3) ctx.fail("expected conv1, conv2, hidden");
        cfg.refine_conv1 = v[0];
        cfg.refine_conv2 = v[1];
        cfg.refine_hidden = v[2];
      } else {
        ctx.fail("unknown key");
      }
    } catch (const std::invalid_argument& e) {
      ctx.fail(e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("config: ") + e.what(), offset);
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_config(in);
}

std::string format_config(const PipelineConfig& cfg) {
  const auto& blocks = cfg.backbone.blocks;
  std::vector<double> res, rad;
  std::vector<std::size_t> ch, ks, layers;
  for (const auto& b : blocks) {
    res.push_back(b.resolution);
    rad.push_back(b.radius);
    ch.push_back(b.channels);
    ks.push_back(b.k);
    layers.push_back(b.layers);
  }
  const auto& s = cfg.backbone.sampling;
  std::ostringstream out;
  out << std::setprecision(17);
  out << "blocks.resolution = " << join(res) << '\n';
  out << "blocks.radius = " << join(rad) << '\n';
  out << "blocks.channels = " << join(ch) << '\n';
  out << "blocks.k = " << join(ks) << '\n';
  out << "blocks.layers = " << join(layers) << '\n';
  out << "crop.enabled = " << (s.extents ? "true" : "false") << '\n';
  if (s.extents) {
    const Extents& e = *s.extents;
    out << "crop.min = " << join(std::vector<double>{e.min.x(), e.min.y(), e.min.z()}) << '\n';
    out << "crop.size = " << join(std::vector<double>{e.size_x, e.size_y, e.size_z}) << '\n';
  }
  out << "sampling.strategy = "
      << (s.strategy == SamplingStrategy::GridBuffer ? "grid_buffer" : "sort_unique") << '\n';
  out << "sampling.seed = " << s.seed << '\n';
  out << "sampling.max_buffer_slots = " << s.max_buffer_slots << '\n';
  out << "deterministic = " << (s.deterministic ? "true" : "false") << '\n';
  out << "threads = " << cfg.threads() << '\n';
  out << "voxel.profile = " << (cfg.backbone.profile == VoxelizeProfile::Dense ? "dense" : "compact")
      << '\n';
  out << "voxel.append_offsets = " << (cfg.backbone.append_offsets ? "true" : "false") << '\n';
  out << "activation = " << (cfg.backbone.activation == Activation::ReLU ? "relu" : "identity")
      << '\n';
  out << "roi.grid = " << cfg.roi.k << '\n';
  out << "roi.n_max = " << cfg.roi.n_max << '\n';
  out << "head.hidden = " << join(cfg.proposal_hidden) << '\n';
  out << "head.anchor = " << join(std::vector<double>(cfg.anchor.begin(), cfg.anchor.end()))
      << '\n';
  out << "stage2.top_k = " << cfg.stage2_top_k << '\n';
  out << "refine.channels = "
      << join(std::vector<std::size_t>{cfg.refine_conv1, cfg.refine_conv2, cfg.refine_hidden})
      << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// KITTI velodyne files

PointCloud parse_kitti_bin(std::span<const unsigned char> bytes) {
  constexpr std::size_t kRecord = 16;
  if (bytes.size() % kRecord != 0) {
    throw ParseError("length " + std::to_string(bytes.size()) + " is not a multiple of 16",
                     bytes.size() - bytes.size() % kRecord);
  }
  const std::size_t n = bytes.size() / kRecord;
  std::vector<Point3> points;
  std::vector<double> features;
  points.reserve(n);
  features.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kRecord;
    const double x = wire::load_f32le(rec);
    const double y = wire::load_f32le(rec + 4);
    const double z = wire::load_f32le(rec + 8);
    const double r = wire::load_f32le(rec + 12);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(r)) {
      throw ParseError("non-finite value in record " + std::to_string(i), i * kRecord);
    }
    points.emplace_back(x, y, z);
    features.push_back(r);
  }
  return PointCloud(std::move(points), std::move(features), 1);
}

PointCloud read_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw ParseError("read failure in " + path.string(), bytes.size());
  return parse_kitti_bin(bytes);
}

void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot create " + path.string());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.point(i);
    wire::write_f32(out, p.x());
    wire::write_f32(out, p.y());
    wire::write_f32(out, p.z());
    wire::write_f32(out, cloud.channels() > 0 ? cloud.feature(i)[0] : 0.0);
  }
  if (!out) throw Error("write failure in " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

constexpr double kGroundZ = -1.7;

// Uniform sample on the box surface minus its bottom face, strictly inside the box.
Point3 sample_box_surface(const OrientedBox& b, Rng& rng) {
  const double w = b.w(), l = b.l(), h = b.h();
  const double faces[5] = {w * l, w * h, w * h, l * h, l * h};
  const double total = faces[0] + faces[1] + faces[2] + faces[3] + faces[4];
  double pick = rng.uniform() * total;
  int face = 0;
  while (face < 4 && pick >= faces[face]) pick -= faces[face++];
  const double u = rng.uniform(-0.5, 0.5);
  const double v = rng.uniform(-0.5, 0.5);
  double lx = 0.0, ly = 0.0, lz = 0.0;
  switch (face) {
    case 0: lx = u * w; ly = v * l; lz = 0.5 * h; break;
    case 1: lx = u * w; ly = 0.5 * l; lz = v * h; break;
    case 2: lx = u * w; ly = -0.5 * l; lz = v * h; break;
    case 3: lx = 0.5 * w; ly = u * l; lz = v * h; break;
    default: lx = -0.5 * w; ly = u * l; lz = v * h; break;
  }
  // Pull surface samples a hair inward so inclusive box tests never miss them to rounding.
  constexpr double kShrink = 1.0 - 1e-6;
  lx *= kShrink;
  ly *= kShrink;
  lz *= kShrink;
  const double c = std::cos(b.r()), s = std::sin(b.r());
  return {b.x() + c * lx - s * ly, b.y() + s * lx + c * ly, b.z() + lz};
}

}  // namespace

SyntheticScene synth_scene(std::size_t n_points, std::size_t n_boxes, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticScene scene;
  scene.boxes.reserve(n_boxes);
  for (std::size_t i = 0; i < n_boxes; ++i) {
    const double w = rng.uniform(1.5, 1.9);
    const double l = rng.uniform(3.5, 4.5);
    const double h = rng.uniform(1.4, 1.7);
    const double x = rng.uniform(5.0, 65.0);
    const double y = rng.uniform(-35.0, 35.0);
    const double r = rng.uniform(-std::numbers::pi, std::numbers::pi);
    scene.boxes.emplace_back(x, y, kGroundZ + 0.5 * h, w, l, h, r);
  }
  const std::size_t on_boxes = n_boxes == 0 ? 0 : (n_points * 3) / 10;
  const std::size_t ground = n_points - on_boxes;
  const Extents crop = kitti_crop();

  scene.cloud = PointCloud(1);
  scene.cloud.reserve(n_points);
  for (std::size_t i = 0; i < ground; ++i) {
    const Point3 p(rng.uniform(crop.min.x(), crop.min.x() + crop.size_x),
                   rng.uniform(crop.min.y(), crop.min.y() + crop.size_y),
                   kGroundZ + rng.uniform(-0.02, 0.02));
    const double intensity = rng.uniform();
    scene.cloud.push_back(p, std::span<const double>(&intensity, 1));
  }
  for (std::size_t i = 0; i < on_boxes; ++i) {
    // Round-robin keeps every box populated once there is at least one point per box.
    const OrientedBox& b = scene.boxes[i % n_boxes];
    const Point3 p = sample_box_surface(b, rng);
    const double intensity = rng.uniform();
    scene.cloud.push_back(p, std::span<const double>(&intensity, 1));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Weights

namespace {

constexpr std::size_t kProposalOutputs = 9;

std::size_t concat_channels(const PipelineConfig& cfg) {
  std::size_t total = 0;
  for (const auto& b : cfg.backbone.blocks) total += b.channels;
  return total;
}

void check_kernel(const ConvKernel& kernel, std::size_t k, std::size_t c_in, std::size_t c_out,
                  const std::string& what) {
  if (kernel.resolution() != k || kernel.in_channels() != c_in || kernel.out_channels() != c_out) {
    throw ShapeError(what + ": expected k=" + std::to_string(k) + " " + std::to_string(c_in) +
                     "->" + std::to_string(c_out) + ", got k=" +
                     std::to_string(kernel.resolution()) + " " +
                     std::to_string(kernel.in_channels()) + "->" +
                     std::to_string(kernel.out_channels()));
  }
}

}  // namespace

ModelWeights init_model_weights(const PipelineConfig& cfg, std::size_t input_channels,
                                std::uint64_t seed) {
  cfg.validate();
  Rng rng(hash_combine(seed, 1));
  std::vector<ConvKernel> head;
  std::size_t width = concat_channels(cfg);
  for (const std::size_t hidden : cfg.proposal_hidden) {
    head.push_back(glorot_kernel(1, width, hidden, rng));
    width = hidden;
  }
  head.push_back(glorot_kernel(1, width, kProposalOutputs, rng));
  return ModelWeights{init_backbone_weights(cfg.backbone, input_channels, seed), std::move(head),
                      init_refine_head(concat_channels(cfg), hash_combine(seed, 2),
                                       cfg.refine_conv1, cfg.refine_conv2, cfg.refine_hidden)};
}

void check_model_weights(const PipelineConfig& cfg, std::size_t input_channels,
                         const ModelWeights& weights) {
  check_backbone_weights(cfg.backbone, input_channels, weights.backbone);
  if (weights.proposal_head.size() != cfg.proposal_hidden.size() + 1) {
    throw ShapeError("proposal head: expected " + std::to_string(cfg.proposal_hidden.size() + 1) +
                     " layers, got " + std::to_string(weights.proposal_head.size()));
  }
  std::size_t width = concat_channels(cfg);
  for (std::size_t i = 0; i < weights.proposal_head.size(); ++i) {
    const std::size_t out =
        i < cfg.proposal_hidden.size() ? cfg.proposal_hidden[i] : kProposalOutputs;
    check_kernel(weights.proposal_head[i], 1, width, out,
                 "proposal head layer " + std::to_string(i));
    width = out;
  }
  const auto& r = weights.refine;
  check_kernel(r.conv1, 3, concat_channels(cfg), cfg.refine_conv1, "refine conv1");
  check_kernel(r.conv2, 3, cfg.refine_conv1, cfg.refine_conv2, "refine conv2");
  check_kernel(r.fc1, 1, cfg.refine_conv2, cfg.refine_hidden, "refine fc1");
  check_kernel(r.fc2, 1, cfg.refine_hidden, kRefineOutputs, "refine fc2");
}

void write_model_weights(std::ostream& out, const ModelWeights& weights) {
  const std::size_t count = weights.backbone.layers.size() + weights.proposal_head.size() + 4;
  wire::write_magic(out, wire::kModelMagic);
  wire::write_u64(out, count);
  for (const auto& k : weights.backbone.layers) write_kernel(out, k);
  for (const auto& k : weights.proposal_head) write_kernel(out, k);
  write_kernel(out, weights.refine.conv1);
  write_kernel(out, weights.refine.conv2);
  write_kernel(out, weights.refine.fc1);
  write_kernel(out, weights.refine.fc2);
  if (!out) throw Error("write_model_weights: stream failure");
}

ModelWeights read_model_weights(std::istream& in, const PipelineConfig& cfg,
                                std::size_t input_channels) {
  wire::Reader header(in);
  header.expect_magic(wire::kModelMagic);
  const std::uint64_t count = header.u64();
  std::size_t backbone_layers = 0;
  for (const auto& b : cfg.backbone.blocks) backbone_layers += b.layers;
  const std::size_t head_layers = cfg.proposal_hidden.size() + 1;
  if (count != backbone_layers + head_layers + 4) {
    throw ShapeError("weights hold " + std::to_string(count) + " kernels, config needs " +
                     std::to_string(backbone_layers + head_layers + 4));
  }
  std::vector<ConvKernel> kernels;
  kernels.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) kernels.push_back(read_kernel(in));

  auto it = kernels.begin();
  BackboneWeights backbone{{it, it + static_cast<std::ptrdiff_t>(backbone_layers)}};
  it += static_cast<std::ptrdiff_t>(backbone_layers);
  std::vector<ConvKernel> head(it, it + static_cast<std::ptrdiff_t>(head_layers));
  it += static_cast<std::ptrdiff_t>(head_layers);
  ModelWeights m{std::move(backbone), std::move(head),
                 RefineHeadWeights{it[0], it[1], it[2], it[3]}};
  check_model_weights(cfg, input_channels, m);
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass

PointCloud with_input_channel(const PointCloud& cloud) {
  if (cloud.channels() > 0) return cloud;
  return PointCloud(cloud.points(), std::vector<double>(cloud.size(), 1.0), 1);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Keeps decoded boxes finite and positive whatever the untrained weights produce.
double bounded(double v, double limit) { return std::clamp(v, -limit, limit); }

OrientedBox decode_box(const Point3& base, std::span<const double> res,
                       const std::array<double, 3>& dims, double yaw) {
  const double diag = std::hypot(dims[0], dims[1]);
  return OrientedBox(base.x() + bounded(res[0], 100.0) * diag,
                     base.y() + bounded(res[1], 100.0) * diag,
                     base.z() + bounded(res[2], 100.0) * dims[2],
                     dims[0] * std::exp(bounded(res[3], 4.0)),
                     dims[1] * std::exp(bounded(res[4], 4.0)),
                     dims[2] * std::exp(bounded(res[5], 4.0)),
                     yaw + bounded(res[6], 100.0));
}

}  // namespace

ForwardResult run_forward(const PointCloud& cloud, const PipelineConfig& cfg,
                          const ModelWeights& weights) {
  cfg.validate();
  const auto t_start = Clock::now();
  ForwardResult result;
  auto& stages = result.report.stages;

  auto t0 = Clock::now();
  const PointCloud input = with_input_channel(cloud);
  stages.push_back({"input", seconds_since(t0), cloud.size(), input.size()});
  check_model_weights(cfg, input.channels(), weights);

  if (input.empty()) {
    result.key_point_counts.assign(cfg.backbone.blocks.size(), 0);
    result.report.total_seconds = seconds_since(t_start);
    return result;
  }

  BackboneConfig bcfg = cfg.backbone;
  bcfg.sampling.threads = bcfg.threads;
  const BackboneOutput backbone = run_backbone(input, bcfg, weights.backbone);
  result.key_point_counts = backbone.key_point_counts();
  result.dropped_points = backbone.dropped;
  std::size_t points_in = input.size();
  for (std::size_t b = 0; b < backbone.blocks.size(); ++b) {
    stages.push_back({"block" + std::to_string(b), backbone.block_seconds[b], points_in,
                      backbone.blocks[b].size()});
    points_in = backbone.blocks[b].size();
  }
  const PointCloud& keys = backbone.concatenated;
  stages.push_back({"concat", backbone.concat_seconds, points_in, keys.size()});
  result.report.peak_buffer_bytes = backbone.peak_buffer_bytes;

  // Stage 1: per-key-point perceptron.
  t0 = Clock::now();
  const std::size_t n = keys.size();
  std::vector<std::array<double, kProposalOutputs>> raw(n);
  parallel_for(n, cfg.threads(), [&](std::size_t i) {
    std::vector<double> h(keys.feature(i).begin(), keys.feature(i).end());
    const std::size_t last = weights.proposal_head.size() - 1;
    for (std::size_t l = 0; l <= last; ++l) {
      h = dense(h, weights.proposal_head[l],
                l == last ? Activation::Identity : Activation::ReLU);
    }
    std::copy(h.begin(), h.end(), raw[i].begin());
  });
  result.proposals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = raw[i];
    Proposal& p = result.proposals[i];
    p.box = decode_box(keys.point(i), std::span<const double>(o.data() + 1, 7), cfg.anchor, 0.0);
    p.confidence = sigmoid(o[0]);
    p.flip_logit = o[8];
    p.key_point = i;
  }
  stages.push_back({"proposal_head", seconds_since(t0), n, n});

  // Stage 2 on the highest-scoring proposals; stable sort keeps ties in key-point order.
  t0 = Clock::now();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw[a][0] > raw[b][0]; });
  order.resize(std::min(n, cfg.stage2_top_k));
  std::vector<std::optional<PooledRoi>> pooled(order.size());
  parallel_for(order.size(), cfg.threads(), [&](std::size_t j) {
    pooled[j] = la_pool(keys, result.proposals[order[j]].box, cfg.roi);
  });
  stages.push_back({"roi_pool", seconds_since(t0), n, order.size()});

  t0 = Clock::now();
  result.refined.resize(order.size());
  parallel_for(order.size(), cfg.threads(), [&](std::size_t j) {
    const RefineOutput out = refine_head(*pooled[j], weights.refine);
    const Proposal& base = result.proposals[order[j]];
    const OrientedBox& b = base.box;
    Proposal& p = result.refined[j];
    const double yaw = out.flip_logit > 0.0 ? b.r() + std::numbers::pi : b.r();
    p.box = decode_box(b.center(), out.residuals, {b.w(), b.l(), b.h()}, yaw);
    p.confidence = sigmoid(out.confidence_logit);
    p.flip_logit = out.flip_logit;
    p.key_point = base.key_point;
  });
  stages.push_back({"refine", seconds_since(t0), order.size(), order.size()});

  result.report.total_seconds = seconds_since(t_start);
  if (result.report.total_seconds > 0.0) {
    result.report.points_per_second =
        static_cast<double>(cloud.size()) / result.report.total_seconds;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Benchmark

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("loglog_slope: need two or more paired values");
  }
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw std::invalid_argument("loglog_slope: sizes must differ");
  return sxy / sxx;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

BenchTable bench(const BenchConfig& cfg) {
  if (cfg.sizes.empty() || cfg.repeats == 0) throw std::invalid_argument("bench: empty sweep");
  if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end())) {
    throw std::invalid_argument("bench: sizes must be ascending");
  }
  if (!(cfg.resolution > 0.0) || !(cfg.slots_per_point > 0.0)) {
    throw std::invalid_argument("bench: resolution and slots_per_point must be positive");
  }
  if (!(cfg.min_seconds >= 0.0) || !std::isfinite(cfg.min_seconds)) {
    throw std::invalid_argument("bench: min_seconds must be non-negative");
  }
  BenchTable table;
  table.stages = {"grid_buffer", "sort_unique"};
  if (cfg.include_voxelize) table.stages.push_back("voxelize");

  for (const std::size_t n : cfg.sizes) {
    // A cube whose slot count is slots_per_point * n keeps the point density fixed.
    const double cells = std::ceil(std::cbrt(cfg.slots_per_point * static_cast<double>(n)));
    const double side = cells * cfg.resolution;
    Rng rng(hash_combine(cfg.seed, n));
    std::vector<Point3> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      pts.emplace_back(rng.uniform(0.0, side), rng.uniform(0.0, side), rng.uniform(0.0, side));
    }
    const PointCloud cloud(std::move(pts), std::vector<double>(n, 1.0), 1);

    SamplingConfig scfg;
    scfg.resolution = cfg.resolution;
    scfg.extents = Extents{Point3(0.0, 0.0, 0.0), side, side, side};
    scfg.seed = cfg.seed;
    scfg.threads = cfg.threads;
    SamplingConfig sort_cfg = scfg;
    sort_cfg.strategy = SamplingStrategy::SortUnique;
    VoxelizationConfig vcfg;
    vcfg.radius = 1.5 * cfg.resolution;
    vcfg.threads = cfg.threads;

    std::vector<std::vector<double>> samples(table.stages.size());
    BenchRow row;
    row.size = n;
    // Short calls are batched until they span min_seconds so timer jitter stays small.
    const auto per_call = [&](auto&& fn) {
      std::size_t calls = 0;
      const auto t0 = Clock::now();
      double elapsed = 0.0;
      do {
        fn();
        ++calls;
        elapsed = seconds_since(t0);
      } while (elapsed < cfg.min_seconds);
      return elapsed / static_cast<double>(calls);
    };
    SampleResult sample;
    std::vector<Point3> centers;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      samples[0].push_back(per_call([&] { sample = downsample_grid_buffer(cloud, scfg); }));
      row.buffer_slots = sample.buffer_slots;
      row.peak_buffer_bytes = sample.peak_buffer_bytes;

      samples[1].push_back(per_call([&] { (void)downsample_sort_unique(cloud, sort_cfg); }));

      if (cfg.include_voxelize) {
        if (centers.empty()) {
          for (const auto i : sample.indices) centers.push_back(cloud.point(i));
        }
        samples[2].push_back(per_call([&] { (void)voxelize_batch(cloud, centers, vcfg); }));
      }
    }
    for (const auto& s : samples) {
      row.median_seconds.push_back(median(s));
      row.total_seconds += row.median_seconds.back();
    }
    table.rows.push_back(std::move(row));
  }

  std::vector<double> sizes;
  for (const auto& row : table.rows) sizes.push_back(static_cast<double>(row.size));
  for (std::size_t s = 0; s < table.stages.size(); ++s) {
    std::vector<double> times;
    for (const auto& row : table.rows) times.push_back(std::max(row.median_seconds[s], 1e-9));
    table.slopes.push_back(sizes.size() >= 2 && sizes.front() != sizes.back()
                               ? loglog_slope(sizes, times)
                               : 0.0);
  }
  return table;
}

}  // namespace dvdet

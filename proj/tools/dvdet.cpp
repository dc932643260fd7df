// dvdet: forward pass, benchmarks, IoU batches, loss evaluation and the oracle suite.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dvdet/iou.hpp"
#include "dvdet/losses.hpp"
#include "dvdet/pipeline.hpp"
#include "dvdet/suite.hpp"

namespace {

using nlohmann::json;
using namespace dvdet;

json box_json(const OrientedBox& b) {
  return json::array({b.x(), b.y(), b.z(), b.w(), b.l(), b.h(), b.r()});
}

OrientedBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7) throw std::invalid_argument("box must be 7 numbers");
  std::array<double, 7> p{};
  for (std::size_t i = 0; i < 7; ++i) p[i] = j.at(i).get<double>();
  return OrientedBox(p);
}

json proposals_json(const std::vector<Proposal>& ps) {
  json out = json::array();
  for (const auto& p : ps) {
    out.push_back({{"box", box_json(p.box)},
                   {"confidence", p.confidence},
                   {"flip_logit", p.flip_logit},
                   {"key_point", p.key_point}});
  }
  return out;
}

void emit(const json& doc, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << doc.dump(2) << '\n';
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write " + out_path);
  out << doc.dump(2) << '\n';
}

// "synthetic:N[:BOXES[:SEED]]" or a KITTI .bin path.
PointCloud load_input(const std::string& spec, std::uint64_t default_seed) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) != 0) return read_kitti_bin(spec);
  std::vector<std::uint64_t> parts;
  std::stringstream ss(spec.substr(prefix.size()));
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(std::stoull(item));
  if (parts.empty() || parts.size() > 3) {
    throw std::invalid_argument("synthetic input is synthetic:N[:BOXES[:SEED]]");
  }
  const std::size_t boxes = parts.size() > 1 ? parts[1] : 8;
  const std::uint64_t seed = parts.size() > 2 ? parts[2] : default_seed;
  return synth_scene(parts[0], boxes, seed).cloud;
}

struct ForwardArgs {
  std::string input = "synthetic:100000";
  std::string config;
  std::string weights;
  std::string save_weights;
  std::string out;
  // Unset options keep the config file's values.
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<bool> deterministic;
  bool summary = false;
};

int run_forward_cmd(const ForwardArgs& a) {
  PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : load_config(a.config);
  if (a.threads) cfg.set_threads(*a.threads);
  if (a.deterministic) cfg.backbone.sampling.deterministic = *a.deterministic;
  if (a.seed) cfg.backbone.sampling.seed = *a.seed;
  const std::uint64_t seed = a.seed.value_or(cfg.backbone.sampling.seed);
  const PointCloud cloud = with_input_channel(load_input(a.input, seed));

  ModelWeights weights = [&] {
    if (a.weights.empty()) return init_model_weights(cfg, cloud.channels(), seed);
    std::ifstream in(a.weights, std::ios::binary);
    if (!in) throw Error("cannot open weights " + a.weights);
    return read_model_weights(in, cfg, cloud.channels());
  }();
  if (!a.save_weights.empty()) {
    std::ofstream out(a.save_weights, std::ios::binary);
    write_model_weights(out, weights);
  }

  const ForwardResult r = run_forward(cloud, cfg, weights);
  json stages = json::array();
  for (const auto& s : r.report.stages) {
    stages.push_back({{"name", s.name},
                      {"seconds", s.seconds},
                      {"points_in", s.points_in},
                      {"points_out", s.points_out}});
  }
  json doc = {{"input_points", cloud.size()},
              {"dropped_points", r.dropped_points},
              {"key_point_counts", r.key_point_counts},
              {"report",
               {{"stages", stages},
                {"total_seconds", r.report.total_seconds},
                {"peak_buffer_bytes", r.report.peak_buffer_bytes},
                {"points_per_second", r.report.points_per_second}}},
              {"proposal_count", r.proposals.size()},
              {"refined", proposals_json(r.refined)}};
  if (!a.summary) doc["proposals"] = proposals_json(r.proposals);
  emit(doc, a.out);
  return 0;
}

int run_bench_cmd(const BenchConfig& cfg, const std::string& out) {
  const BenchTable t = bench(cfg);
  json rows = json::array();
  for (const auto& row : t.rows) {
    json stages = json::object();
    for (std::size_t s = 0; s < t.stages.size(); ++s) stages[t.stages[s]] = row.median_seconds[s];
    rows.push_back({{"size", row.size},
                    {"median_seconds", stages},
                    {"total_seconds", row.total_seconds},
                    {"buffer_slots", row.buffer_slots},
                    {"peak_buffer_bytes", row.peak_buffer_bytes}});
  }
  json slopes = json::object();
  for (std::size_t s = 0; s < t.stages.size(); ++s) slopes[t.stages[s]] = t.slopes[s];
  emit({{"rows", rows}, {"loglog_slopes", slopes}, {"repeats", cfg.repeats}}, out);
  return 0;
}

// One pair per line: 14 numbers (predicted box then reference box), commas or spaces.
int run_iou_cmd(const std::string& input, bool grad, unsigned threads) {
  std::ifstream file;
  if (!input.empty() && input != "-") {
    file.open(input);
    if (!file) throw Error("cannot open " + input);
  }
  std::istream& in = file.is_open() ? file : std::cin;
  std::vector<BoxPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  std::size_t line_start = 0;
  std::size_t next_start = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line_start = next_start;
    next_start += line.size() + 1;
    line = line.substr(0, line.find('#'));
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::vector<double> v;
    double x = 0.0;
    while (ss >> x) v.push_back(x);
    if (v.size() != 14 || !ss.eof()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 14 numbers", line_start);
    }
    pairs.push_back({OrientedBox(v[0], v[1], v[2], v[3], v[4], v[5], v[6]),
                     OrientedBox(v[7], v[8], v[9], v[10], v[11], v[12], v[13])});
  }
  std::printf(grad ? "iou,loss,smooth,dx_p,dy_p,dz_p,dw_p,dl_p,dh_p,dr_p,dx_g,dy_g,dz_g,dw_g,"
                     "dl_g,dh_g,dr_g\n"
                   : "iou,loss,smooth\n");
  if (grad) {
    for (const auto& g : iou3d_grad_batch(pairs, threads)) {
      std::printf("%.17g,%.17g,%d", g.iou3d, g.loss, g.smooth ? 1 : 0);
      for (const double d : g.grad) std::printf(",%.17g", d);
      std::printf("\n");
    }
  } else {
    for (const auto& r : iou3d_batch(pairs, threads)) {
      std::printf("%.17g,%.17g,%d\n", r.iou3d, r.loss, r.smooth ? 1 : 0);
    }
  }
  return 0;
}

// {"stage": 1 or 2, "points": [{"cls_logit" | "conf_logit", "flip_logit", "box", "gt_box"?}]}
int run_eval_losses_cmd(const std::string& path, const std::string& out) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  const json doc = json::parse(in);
  const int stage = doc.value("stage", 1);
  TargetAssignment targets;
  std::vector<Stage1Prediction> s1;
  std::vector<Stage2Prediction> s2;
  for (const auto& p : doc.at("points")) {
    const bool fg = p.contains("gt_box") && !p.at("gt_box").is_null();
    targets.foreground.push_back(fg);
    targets.gt_boxes.push_back(fg ? std::optional<OrientedBox>(box_from_json(p.at("gt_box")))
                                  : std::nullopt);
    const OrientedBox box = p.contains("box") ? box_from_json(p.at("box"))
                                              : OrientedBox(0, 0, 0, 1, 1, 1, 0);
    if (stage == 1) {
      s1.push_back({p.value("cls_logit", 0.0), box});
    } else {
      s2.push_back({p.value("conf_logit", 0.0), p.value("flip_logit", 0.0), box});
    }
  }
  LossWeights w;
  if (doc.contains("weights")) {
    const auto& jw = doc.at("weights");
    w.alpha = jw.value("alpha", w.alpha);
    w.beta = jw.value("beta", w.beta);
    w.gamma = jw.value("gamma", w.gamma);
  }
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  const LossBreakdown b = stage == 1 ? evaluate_stage1(s1, targets, w) : evaluate_stage2(s2, targets, w);
  json result = {{"stage", stage},
                 {"total", b.total},
                 {stage == 1 ? "cls" : "conf", b.cls_or_conf},
                 {"iou", b.iou},
                 {"rot", b.rot},
                 {"foreground", b.foreground},
                 {"points", targets.foreground.size()}};
  if (stage == 2) result["flip"] = b.flip;
  emit(result, out);
  return 0;
}

int run_verify_cmd(const SuiteConfig& cfg) {
  std::size_t failed = 0;
  run_suite(cfg, [&](const Check& c) {
    if (!c.passed) ++failed;
    std::printf("%s %-36s %8.2fs  %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.seconds,
                c.detail.c_str());
    std::fflush(stdout);
  });
  std::printf("%zu check(s) failed\n", failed);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud detection kernels: forward pass, benchmarks and oracle checks"};
  app.require_subcommand(1);

  ForwardArgs fwd;
  auto* forward = app.add_subcommand("forward", "Run the two-stage forward pass on one cloud");
  forward->add_option("--input", fwd.input, "KITTI .bin file or synthetic:N[:BOXES[:SEED]]")
      ->capture_default_str();
  forward->add_option("--config", fwd.config, "Config file of key = value lines");
  forward->add_option("--weights", fwd.weights, "Model weight blob; seeded init when absent");
  forward->add_option("--save-weights", fwd.save_weights, "Write the weights used to this blob");
  forward->add_option("--seed", fwd.seed, "Seed for sampling, weights and synthetic input");
  forward->add_option("--threads", fwd.threads, "Worker threads")->check(CLI::PositiveNumber);
  forward->add_option("--deterministic", fwd.deterministic, "Lowest-index cell winners")
      ->capture_default_str();
  forward->add_flag("--summary", fwd.summary, "Omit the per-key-point proposal list");
  forward->add_option("--out", fwd.out, "Write the JSON report here instead of stdout");

  BenchConfig bcfg;
  std::string bench_out;
  bool no_voxelize = false;
  auto* bench_cmd = app.add_subcommand("bench", "Time downsampling and voxelization over sizes");
  bench_cmd->add_option("--sizes", bcfg.sizes, "Ascending point counts")->delimiter(',');
  bench_cmd->add_option("--repeats", bcfg.repeats, "Repeats per size; medians are reported")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--resolution", bcfg.resolution, "Lattice cell size in meters");
  bench_cmd->add_option("--slots-per-point", bcfg.slots_per_point, "Buffer slots per input point");
  bench_cmd->add_option("--min-seconds", bcfg.min_seconds, "Batch short calls up to this wall time")
      ->capture_default_str();
  bench_cmd->add_option("--seed", bcfg.seed, "Point generator seed");
  bench_cmd->add_option("--threads", bcfg.threads, "Worker threads")->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--no-voxelize", no_voxelize, "Skip the voxelization stage");
  bench_cmd->add_option("--out", bench_out, "Write the JSON table here instead of stdout");

  std::string iou_input;
  bool iou_grad = false;
  unsigned iou_threads = 1;
  auto* iou_cmd = app.add_subcommand("iou", "3D IoU for box pairs read one per line");
  iou_cmd->add_option("--input", iou_input, "Pair file; stdin when absent or '-'");
  iou_cmd->add_flag("--grad", iou_grad, "Append d(loss)/d(parameter) columns");
  iou_cmd->add_option("--threads", iou_threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string loss_input;
  std::string loss_out;
  auto* loss_cmd = app.add_subcommand("eval-losses", "Evaluate stage losses for an assignment file");
  loss_cmd->add_option("assignment", loss_input, "JSON assignment file")->required();
  loss_cmd->add_option("--out", loss_out, "Write the JSON result here instead of stdout");

  SuiteConfig scfg;
  bool no_bench = false;
  auto* verify = app.add_subcommand("verify", "Run the oracle suite and print pass/fail lines");
  verify->add_option("--scale", scfg.scale, "Fraction of the full instance counts")
      ->check(CLI::Range(1e-3, 1.0))
      ->capture_default_str();
  verify->add_option("--seed", scfg.seed, "Suite seed")->capture_default_str();
  verify->add_option("--samples", scfg.mc_samples, "Monte Carlo samples per IoU estimate")
      ->check(CLI::Range(10'000ULL, 100'000'000ULL))
      ->capture_default_str();
  verify->add_option("--threads", scfg.threads, "Worker threads")->check(CLI::PositiveNumber);
  verify->add_flag("--no-bench", no_bench, "Skip the scaling benchmark");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*forward) return run_forward_cmd(fwd);
    if (*bench_cmd) {
      bcfg.include_voxelize = !no_voxelize;
      return run_bench_cmd(bcfg, bench_out);
    }
    if (*iou_cmd) return run_iou_cmd(iou_input, iou_grad, iou_threads);
    if (*loss_cmd) return run_eval_losses_cmd(loss_input, loss_out);
    if (*verify) {
      scfg.include_bench = !no_bench;
      return run_verify_cmd(scfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "dvdet: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

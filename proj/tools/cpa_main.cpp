// Copyright 2026 The CPA-Enhancer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Single entry point: degrade, init, enhance, gradcheck, train, report.
// Exit codes: 0 success, 1 verification failure, 2 input/config error,
// 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "cpa/degrade.hpp"
#include "cpa/enhancer.hpp"
#include "cpa/errors.hpp"
#include "cpa/grad_suite.hpp"
#include "cpa/train.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cpa;

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kInputError = 2;
constexpr int kNumericalError = 3;

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  bool verbose = false;
  std::string config;
};

RunConfig run_config(const Common& common) {
  RunConfig cfg = common.config.empty() ? RunConfig{} : load_run_config(common.config);
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw InputError(what + " not found: " + path);
}

std::vector<degrade::Kind> parse_kinds(const std::string& list) {
  std::vector<degrade::Kind> kinds;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) kinds.push_back(degrade::parse_kind(item));
  }
  if (kinds.empty()) throw ConfigError("no degradation kinds given");
  return kinds;
}

// ---------------------------------------------------------------------------
// degrade

struct DegradeArgs {
  std::string kind = "fog";
  std::string kinds;
  double A = 0.5;
  int i = 0;
  double gamma = 2.0;
  std::string density = "medium";
  std::string mask;
  double beta = 0.8;
  bool overlay = false;
  double sigma = 25.0;
  std::string input;
  std::string output;
  std::string src_dir;
  std::string dst_dir;
  std::string manifest;
  double mix = 1.0;
  int synth = 0;
  int size = 64;
  bool explicit_params = false;
};

degrade::DegradationSpec explicit_spec(const DegradeArgs& a, degrade::Kind kind, std::uint64_t seed) {
  degrade::DegradationSpec spec{kind, std::monostate{}, seed};
  switch (kind) {
    case degrade::Kind::fog: spec.params = degrade::FogParams{a.A, a.i}; break;
    case degrade::Kind::dark: spec.params = degrade::DarkParams{a.gamma}; break;
    case degrade::Kind::snow: spec.params = degrade::SnowParams{a.density, a.mask}; break;
    case degrade::Kind::rain: spec.params = degrade::RainParams{a.beta, a.overlay, {}}; break;
    case degrade::Kind::noise: spec.params = degrade::NoiseParams{a.sigma}; break;
    case degrade::Kind::none: break;
  }
  return spec;
}

void print_entry(const degrade::ManifestEntry& e) {
  std::cout << e.src << " -> " << e.dst << " " << degrade::to_string(e.spec.kind) << " "
            << degrade::params_to_json(e.spec) << " seed=" << e.spec.seed << "\n";
}

int cmd_degrade(const DegradeArgs& a, const Common& common) {
  if (!a.input.empty()) {
    // Single image: explicit parameters, defaults where a flag is absent.
    if (a.output.empty()) throw InputError("degrade needs an output path");
    const Image img = read_image(a.input);
    const auto spec = explicit_spec(a, degrade::parse_kind(a.kind), common.seed);
    write_image(a.output, degrade::apply(img, spec));
    degrade::ManifestEntry entry{a.input, a.output, spec, std::nullopt};
    print_entry(entry);
    if (!a.manifest.empty()) degrade::write_manifest(a.manifest, {{entry}});
    return kOk;
  }
  if (a.src_dir.empty() || a.dst_dir.empty()) {
    throw InputError("degrade needs either <input> <output> or --src-dir and --dst-dir");
  }
  if (a.synth > 0) write_scenes(a.src_dir, a.synth, a.size, common.seed);
  std::vector<degrade::DegradationSpec> specs;
  for (const auto kind : a.kinds.empty() ? std::vector{degrade::parse_kind(a.kind)} : parse_kinds(a.kinds)) {
    // Without explicit parameter flags each image samples its own.
    specs.push_back(a.explicit_params ? explicit_spec(a, kind, 0) : degrade::DegradationSpec{kind, {}, 0});
  }
  const auto manifest = degrade::build_manifest(a.src_dir, specs, a.mix, common.seed, a.dst_dir);
  degrade::materialize(manifest);
  degrade::write_manifest(a.manifest.empty() ? fs::path(a.dst_dir) / "manifest.jsonl" : fs::path(a.manifest),
                          manifest);
  for (const auto& e : manifest.entries) print_entry(e);
  return kOk;
}

// ---------------------------------------------------------------------------
// init / enhance

struct ModelArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string dump_features;
};

int cmd_init(const ModelArgs& a, const Common& common) {
  const RunConfig cfg = run_config(common);
  const ParamStore params = init_params(cfg.enhancer, common.seed);
  save_checkpoint(a.checkpoint, params, cfg.enhancer.elem_type);
  std::cout << "wrote " << a.checkpoint << " (" << params.scalar_count() << " parameters)\n";
  return kOk;
}

void dump_tensor(const fs::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  const auto v = t.data();
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

int cmd_enhance(const ModelArgs& a, const Common& common) {
  const RunConfig cfg = run_config(common);
  require_file(a.checkpoint, "checkpoint");
  const Image img = read_image(a.input);
  const ParamStore params = load_checkpoint(a.checkpoint);
  check_compatible(params, cfg.enhancer);
  const Enhanced out = enhance(img, params, cfg.enhancer);
  write_image(a.output, out.image);
  if (!a.dump_features.empty()) {
    const fs::path dir = a.dump_features;
    fs::create_directories(dir);
    json sidecar;
    sidecar["dtype"] = "f64";
    sidecar["byte_order"] = "little";
    sidecar["layout"] = "NCHW";
    for (int level = 1; level <= 3; ++level) {
      const Tensor& t = out.features.block[level - 1];
      const std::string file = "level" + std::to_string(level) + ".bin";
      dump_tensor(dir / file, t);
      const Shape s = t.shape();
      sidecar["levels"].push_back({{"level", level}, {"file", file}, {"shape", {s.n, s.c, s.h, s.w}}});
      std::cout << "level " << level << ": " << s.str() << "\n";
    }
    std::ofstream(dir / "features.json") << sidecar.dump(2) << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
  double tol = 1e-4;
  std::string filter;
  std::string fault;
};

int cmd_gradcheck(const GradArgs& a, const Common& common) {
  set_gradient_fault(a.fault);
  std::vector<std::string> failed;
  const auto reports = run_grad_suite(a.tol, common.seed, a.filter, [&](const GradCheckReport& r) {
    std::printf("%-26s max_rel_error=%.3e %s\n", r.op.c_str(), r.max_rel_error, r.pass ? "PASS" : "FAIL");
    if (!r.pass) failed.push_back(r.op);
  });
  set_gradient_fault("");
  if (reports.empty()) throw InputError("no gradient-check case matches '" + a.filter + "'");
  if (failed.empty()) {
    std::printf("all %zu checks passed at tol %g\n", reports.size(), a.tol);
    return kOk;
  }
  std::string names;
  for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
  std::printf("FAILED at tol %g: %s\n", a.tol, names.c_str());
  return kVerifyFailed;
}

// ---------------------------------------------------------------------------
// train / report

struct TrainArgs {
  std::string manifest;
  std::string out_dir;
  int iters = -1;
};

int cmd_train(const TrainArgs& a, const Common& common, bool seed_given) {
  RunConfig cfg = run_config(common);
  if (a.iters >= 0) cfg.train.iters = a.iters;
  if (seed_given) cfg.train.seed = common.seed;
  cfg.train.threads = common.threads;
  validate(cfg.train);
  require_file(a.manifest, "manifest");
  const auto manifest = degrade::read_manifest(a.manifest);
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);

  const ParamStore init = init_params(cfg.enhancer, cfg.train.seed);
  const auto pairs = load_pairs(manifest, cfg.train.resolution);
  const TrainResult r = train(pairs, init, cfg.enhancer, cfg.train, [&](int it, double loss) {
    if (common.verbose) std::printf("iter %d loss %.6f\n", it, loss);
  });
  save_checkpoint(dir / "checkpoint.cpae", r.params, cfg.enhancer.elem_type);
  write_loss_csv(dir / "loss.csv", r.losses);
  json summary;
  summary["initial_loss"] = r.initial_loss;
  summary["final_loss"] = r.final_loss;
  summary["ratio"] = r.final_loss / r.initial_loss;
  summary["iters"] = cfg.train.iters;
  summary["config"] = json::parse(to_json(cfg));
  std::ofstream(dir / "train.json") << summary.dump(2) << "\n";
  std::printf("initial loss %.6f final loss %.6f ratio %.4f\n", r.initial_loss, r.final_loss,
              r.final_loss / r.initial_loss);
  return kOk;
}

struct ReportArgs {
  std::string checkpoint;
  std::string kinds = "fog,dark,snow,rain";
  int per_kind = kMinProbesPerKind;
  int size = 64;
  std::vector<int> levels{1, 2, 3};
  std::string out;
};

int cmd_report(const ReportArgs& a, const Common& common) {
  const RunConfig cfg = run_config(common);
  const auto kinds = parse_kinds(a.kinds);
  if (kinds.size() < 2) throw InputError("report needs at least two degradation kinds");
  require_file(a.checkpoint, "checkpoint");
  const ParamStore params = load_checkpoint(a.checkpoint);
  check_compatible(params, cfg.enhancer);
  const auto probes = make_probes(a.per_kind, a.size, kinds, common.seed);
  json out;
  out["probe_seed"] = common.seed;
  for (const int level : a.levels) {
    const auto r = measure_discriminability(params, cfg.enhancer, probes, level);
    out["levels"].push_back(json::parse(to_json(r)));
    std::printf("level %d silhouette %.6f%s\n", level, r.silhouette, r.degenerate ? " (degenerate)" : "");
  }
  const std::string text = out.dump(2);
  if (a.out.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream os(a.out, std::ios::trunc);
    if (!os) throw InputError("cannot write " + a.out);
    os << text << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CPA-Enhancer toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  Common common;
  app.add_option("--seed", common.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", common.threads, "Worker threads for training")->check(CLI::PositiveNumber);
  app.add_option("--config", common.config, "JSON config with enhancer and train sections");
  app.add_flag("-v,--verbose", common.verbose, "Per-iteration logging");

  DegradeArgs da;
  auto* degrade_cmd = app.add_subcommand("degrade", "Synthesize degraded images and a manifest");
  degrade_cmd->add_option("input", da.input, "Input image (single-image mode)");
  degrade_cmd->add_option("output", da.output, "Output image (single-image mode)");
  degrade_cmd->add_option("--kind", da.kind, "fog, dark, snow, rain or noise")->capture_default_str();
  degrade_cmd->add_option("--kinds", da.kinds, "Comma-separated kinds cycled over a directory");
  std::vector<CLI::Option*> param_opts{
      degrade_cmd->add_option("--A", da.A, "Fog atmospheric light")->capture_default_str(),
      degrade_cmd->add_option("--i", da.i, "Fog level 0..9")->capture_default_str(),
      degrade_cmd->add_option("--gamma", da.gamma, "Low-light gamma")->capture_default_str(),
      degrade_cmd->add_option("--density", da.density, "Snow mask density")->capture_default_str(),
      degrade_cmd->add_option("--mask", da.mask, "Snow mask image"),
      degrade_cmd->add_option("--beta", da.beta, "Rain blend weight")->capture_default_str(),
      degrade_cmd->add_flag("--overlay", da.overlay, "Blend rain toward the streak field"),
      degrade_cmd->add_option("--sigma", da.sigma, "Noise std on the 0..255 scale")->capture_default_str()};
  degrade_cmd->add_option("--src-dir", da.src_dir, "Directory of clean images");
  degrade_cmd->add_option("--dst-dir", da.dst_dir, "Directory for degraded images");
  degrade_cmd->add_option("--manifest", da.manifest, "Manifest path (JSON lines)");
  degrade_cmd->add_option("--mix", da.mix, "Fraction of images degraded")->check(CLI::Range(0.0, 1.0));
  degrade_cmd->add_option("--synth", da.synth, "First write this many procedural scenes into --src-dir");
  degrade_cmd->add_option("--size", da.size, "Side of synthesized scenes")->capture_default_str();

  ModelArgs ma;
  auto* init_cmd = app.add_subcommand("init", "Write an initial checkpoint (identity final projection)");
  init_cmd->add_option("checkpoint", ma.checkpoint, "Output checkpoint")->required();

  auto* enhance_cmd = app.add_subcommand("enhance", "Enhance one image");
  enhance_cmd->add_option("--checkpoint", ma.checkpoint, "Checkpoint file")->required();
  enhance_cmd->add_option("input", ma.input, "Input image")->required();
  enhance_cmd->add_option("output", ma.output, "Output image")->required();
  enhance_cmd->add_option("--dump-features", ma.dump_features, "Directory for per-level block outputs");

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Central-difference gradient suite");
  grad_cmd->add_option("--tol", ga.tol, "Max relative error")->capture_default_str();
  grad_cmd->add_option("--filter", ga.filter, "Only cases whose name contains this");
  grad_cmd->add_option("--fault", ga.fault, "Test hook: flip the gradient sign of this op");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Toy L1 restoration training");
  train_cmd->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
  train_cmd->add_option("--out", ta.out_dir, "Output directory")->required();
  train_cmd->add_option("--iters", ta.iters, "Override the configured iteration count");

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "Prompt discriminability (silhouette) report");
  report_cmd->add_option("--checkpoint", ra.checkpoint, "Checkpoint file")->required();
  report_cmd->add_option("--kinds", ra.kinds, "Comma-separated probe kinds")->capture_default_str();
  report_cmd->add_option("--per-kind", ra.per_kind, "Probe scenes per kind")->capture_default_str();
  report_cmd->add_option("--size", ra.size, "Probe side")->capture_default_str();
  report_cmd->add_option("--levels", ra.levels, "Decoder levels")->capture_default_str();
  report_cmd->add_option("--out", ra.out, "Report JSON path (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*degrade_cmd) {
      for (const auto* opt : param_opts) da.explicit_params = da.explicit_params || opt->count() > 0;
      return cmd_degrade(da, common);
    }
    if (*init_cmd) return cmd_init(ma, common);
    if (*enhance_cmd) return cmd_enhance(ma, common);
    if (*grad_cmd) return cmd_gradcheck(ga, common);
    if (*train_cmd) return cmd_train(ta, common, app.get_option("--seed")->count() > 0);
    if (*report_cmd) return cmd_report(ra, common);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

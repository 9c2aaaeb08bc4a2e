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

#include "cpa/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "cpa/errors.hpp"
#include "cpa/ops.hpp"
#include "json.hpp"

namespace cpa {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Restores the previous strict-finite setting on scope exit.
class StrictGuard {
 public:
  explicit StrictGuard(bool enabled) : previous_(strict_finite()) { set_strict_finite(enabled); }
  ~StrictGuard() { set_strict_finite(previous_); }
  StrictGuard(const StrictGuard&) = delete;
  StrictGuard& operator=(const StrictGuard&) = delete;

 private:
  bool previous_;
};

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Image as_rgb(Image img) {
  if (img.channels == 3) return img;
  if (img.channels != 1) throw InputError("expected a gray or RGB image");
  Image out(img.height, img.width, 3);
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    for (int c = 0; c < 3; ++c) out.pixels[p * 3 + c] = img.pixels[p];
  }
  return out;
}

Tensor load_tensor(const std::string& path, int resolution) {
  return to_tensor(resize_bilinear(as_rgb(read_image(path)), resolution, resolution));
}

// Forward and backward for one sample on a private binding of the weights.
BatchGradients sample_gradients(const ParamStore& params, const EnhancerConfig& ecfg, const TrainPair& pair) {
  ParamStore bound = params.bind();
  Tensor loss = l1_loss(forward(pair.degraded, bound, ecfg).image, pair.clean);
  loss.backward();
  return {loss.item(), collect_grads(bound)};
}

// Uniform index in [0, n) from the upper bits, independent of the library's
// distribution implementation.
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw_index(rng, i)]);
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (cfg.batch < 1) throw ConfigError("batch must be at least 1");
  if (cfg.iters < 0) throw ConfigError("iters must be non-negative");
  if (cfg.resolution < 8 || cfg.resolution % 8 != 0) throw ConfigError("resolution must be a positive multiple of 8");
  if (cfg.threads < 1) throw ConfigError("threads must be at least 1");
  if (cfg.kinds.empty()) throw ConfigError("at least one degradation kind is required");
  for (const auto kind : cfg.kinds) {
    if (kind == degrade::Kind::none) throw ConfigError("'none' is not a degradation kind");
  }
}

std::string to_json(const TrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["momentum"] = cfg.momentum;
  j["batch"] = cfg.batch;
  j["iters"] = cfg.iters;
  j["seed"] = cfg.seed;
  j["kinds"] = json::array();
  for (const auto kind : cfg.kinds) j["kinds"].push_back(degrade::to_string(kind));
  j["resolution"] = cfg.resolution;
  j["threads"] = cfg.threads;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    static const std::set<std::string> known{"lr",   "weight_decay", "momentum",   "batch",  "iters",
                                             "seed", "kinds",        "resolution", "threads"};
    for (const auto& [key, _] : j.items()) {
      if (!known.count(key)) throw ConfigError("unknown train config field '" + key + "'");
    }
    cfg.lr = j.value("lr", cfg.lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.iters = j.value("iters", cfg.iters);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.resolution = j.value("resolution", cfg.resolution);
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("kinds")) {
      cfg.kinds.clear();
      for (const auto& k : j.at("kinds")) cfg.kinds.push_back(degrade::parse_kind(k.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

RunConfig run_config_from_json(const std::string& text) {
  RunConfig cfg;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (key != "enhancer" && key != "train") throw ConfigError("unknown config section '" + key + "'");
    }
    if (j.contains("enhancer")) cfg.enhancer = enhancer_config_from_json(j.at("enhancer").dump());
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train").dump());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str());
}

std::string to_json(const RunConfig& cfg) {
  json j;
  j["enhancer"] = json::parse(to_json(cfg.enhancer));
  j["train"] = json::parse(to_json(cfg.train));
  return j.dump(2);
}

GradMap collect_grads(const ParamStore& params) {
  GradMap grads;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw ConsistencyError("no gradient for parameter '" + name + "'");
    grads.emplace(name, std::vector<double>(t.grad().begin(), t.grad().end()));
  }
  return grads;
}

Sgd::Sgd(const TrainConfig& cfg) : lr_(cfg.lr), momentum_(cfg.momentum), weight_decay_(cfg.weight_decay) {
  if (lr_ < 0.0) throw ConfigError("lr must be non-negative");
}

void Sgd::step(ParamStore& params, const GradMap& grads) {
  for (auto& [name, t] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ConsistencyError("no gradient for parameter '" + name + "'");
    std::span<double> theta = t.mutable_data();
    if (g->second.size() != theta.size()) throw ConsistencyError("gradient size mismatch for '" + name + "'");
    auto& v = velocity_[name];
    if (v.empty()) v.assign(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum_ * v[i] + g->second[i] + weight_decay_ * theta[i];
      theta[i] -= lr_ * v[i];
    }
  }
}

std::vector<TrainPair> load_pairs(const degrade::DatasetManifest& manifest, int resolution) {
  if (manifest.entries.empty()) throw InputError("empty dataset manifest");
  std::vector<TrainPair> pairs;
  pairs.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    pairs.push_back({load_tensor(e.dst, resolution), load_tensor(e.src, resolution)});
  }
  return pairs;
}

Tensor l1_loss(const Tensor& prediction, const Tensor& target) { return mean(abs(sub(prediction, target))); }

BatchGradients batch_gradients(const ParamStore& params, const EnhancerConfig& ecfg,
                               const std::vector<const TrainPair*>& batch, int threads) {
  if (batch.empty()) throw UsageError("empty batch");
  std::vector<BatchGradients> per_sample(batch.size());
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), batch.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) per_sample[i] = sample_gradients(params, ecfg, *batch[i]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < batch.size(); i += workers) {
            per_sample[i] = sample_gradients(params, ecfg, *batch[i]);
          }
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  BatchGradients out = std::move(per_sample[0]);
  for (std::size_t i = 1; i < per_sample.size(); ++i) {
    out.loss += per_sample[i].loss;
    for (auto& [name, g] : out.grads) {
      const auto& gi = per_sample[i].grads.at(name);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& [name, g] : out.grads) {
    for (double& x : g) x *= inv;
  }
  return out;
}

double dataset_loss(const ParamStore& params, const EnhancerConfig& ecfg, const std::vector<TrainPair>& pairs) {
  if (pairs.empty()) throw InputError("no training pairs");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& p : pairs) total += l1_loss(forward(p.degraded, params, ecfg).image, p.clean).item();
  return total / static_cast<double>(pairs.size());
}

TrainResult train(const std::vector<TrainPair>& pairs, const ParamStore& init, const EnhancerConfig& ecfg,
                  const TrainConfig& cfg, const StepCallback& on_step) {
  validate(cfg);
  validate(ecfg);
  check_compatible(init, ecfg);
  if (pairs.empty()) throw InputError("no training pairs");
  // Non-finite values are caught on the loss and gradients with the
  // iteration attached rather than deep inside an op.
  StrictGuard strict(false);

  TrainResult result;
  result.params = init.clone();
  result.initial_loss = dataset_loss(result.params, ecfg, pairs);
  if (!std::isfinite(result.initial_loss)) throw NumericalError("non-finite loss before training");

  Sgd sgd(cfg);
  std::mt19937_64 rng(degrade::mix_seed(cfg.seed, 0x5eed));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  std::size_t cursor = 0;

  for (int it = 0; it < cfg.iters; ++it) {
    std::vector<const TrainPair*> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        shuffle(order, rng);
        cursor = 0;
      }
      batch.push_back(&pairs[order[cursor++]]);
    }
    BatchGradients bg = batch_gradients(result.params, ecfg, batch, cfg.threads);
    if (!std::isfinite(bg.loss)) {
      throw NumericalError("non-finite loss at iteration " + std::to_string(it));
    }
    for (const auto& [name, g] : bg.grads) {
      if (!all_finite(g)) {
        throw NumericalError("non-finite gradient for '" + name + "' at iteration " + std::to_string(it));
      }
    }
    result.losses.push_back(bg.loss);
    if (on_step) on_step(it, bg.loss);
    sgd.step(result.params, bg.grads);
  }

  result.final_loss = dataset_loss(result.params, ecfg, pairs);
  if (!std::isfinite(result.final_loss)) throw NumericalError("non-finite loss after training");
  return result;
}

TrainResult train_toy(const degrade::DatasetManifest& dataset, const TrainConfig& cfg, const EnhancerConfig& ecfg,
                      const StepCallback& on_step) {
  validate(cfg);
  return train(load_pairs(dataset, cfg.resolution), init_params(ecfg, cfg.seed), ecfg, cfg, on_step);
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  os << "iter,loss\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << "," << losses[i] << "\n";
  if (!os) throw InputError("failed writing " + path.string());
}

Image synth_scene(int size, std::uint64_t seed) {
  if (size < 1) throw ParameterError("scene size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto colour = [&] { return std::array<double, 3>{0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng)}; };

  const auto top = colour();
  const auto bottom = colour();
  const double fx = 2.0 + 6.0 * u(rng);
  const double fy = 2.0 + 6.0 * u(rng);
  const double phase = 6.283185307179586 * u(rng);

  struct Shape2d {
    bool circle;
    double cx, cy, rx, ry;
    std::array<double, 3> rgb;
  };
  std::vector<Shape2d> shapes(3 + draw_index(rng, 4));
  for (auto& s : shapes) {
    s.circle = u(rng) < 0.5;
    s.cx = u(rng);
    s.cy = u(rng);
    s.rx = 0.08 + 0.25 * u(rng);
    s.ry = s.circle ? s.rx : 0.08 + 0.25 * u(rng);
    s.rgb = colour();
  }

  Image img(size, size, 3);
  for (int y = 0; y < size; ++y) {
    const double ty = (y + 0.5) / size;
    for (int x = 0; x < size; ++x) {
      const double tx = (x + 0.5) / size;
      std::array<double, 3> px{};
      for (int c = 0; c < 3; ++c) px[c] = top[c] + (bottom[c] - top[c]) * ty;
      for (const auto& s : shapes) {
        const double dx = (tx - s.cx) / s.rx;
        const double dy = (ty - s.cy) / s.ry;
        const bool inside = s.circle ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) px = s.rgb;
      }
      const double texture = 0.04 * std::sin(6.283185307179586 * (fx * tx + fy * ty) + phase);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(std::clamp(px[c] + texture, 0.0, 1.0));
    }
  }
  return img;
}

std::vector<fs::path> write_scenes(const fs::path& dir, int count, int size, std::uint64_t seed) {
  if (count < 1) throw ParameterError("scene count must be positive");
  fs::create_directories(dir);
  std::vector<fs::path> paths;
  for (int i = 0; i < count; ++i) {
    std::ostringstream name;
    name << "scene_" << std::setw(2) << std::setfill('0') << i << ".png";
    paths.push_back(dir / name.str());
    write_image(paths.back(), synth_scene(size, degrade::mix_seed(seed, static_cast<std::uint64_t>(i))));
  }
  return paths;
}

degrade::DatasetManifest prepare_toy_dataset(const fs::path& workdir, int count, int size,
                                             const std::vector<degrade::Kind>& kinds, std::uint64_t seed) {
  if (kinds.empty()) throw ConfigError("at least one degradation kind is required");
  write_scenes(workdir / "clean", count, size, seed);
  std::vector<degrade::DegradationSpec> specs;
  for (const auto kind : kinds) specs.push_back({kind, std::monostate{}, 0});
  auto manifest = degrade::build_manifest(workdir / "clean", specs, 1.0, seed, workdir / "degraded");
  degrade::materialize(manifest);
  degrade::write_manifest(workdir / "manifest.jsonl", manifest);
  return manifest;
}

std::vector<Probe> make_probes(int per_kind, int size, const std::vector<degrade::Kind>& kinds, std::uint64_t seed) {
  std::vector<Probe> probes;
  for (int s = 0; s < per_kind; ++s) {
    const Image scene = synth_scene(size, degrade::mix_seed(seed, static_cast<std::uint64_t>(s)));
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const auto index = static_cast<std::uint64_t>(s) * kinds.size() + k;
      const auto spec = degrade::sample_spec(kinds[k], degrade::mix_seed(~seed, index));
      probes.push_back({to_tensor(degrade::apply(scene, spec)), kinds[k]});
    }
  }
  return probes;
}

SilhouetteResult silhouette(const std::vector<std::vector<double>>& points, const std::vector<int>& labels) {
  const std::size_t n = points.size();
  if (n != labels.size()) throw UsageError("one label per point is required");
  const std::set<int> clusters(labels.begin(), labels.end());
  if (clusters.size() < 2) throw InputError("silhouette needs at least two clusters");

  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  bool all_zero = true;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (points[i].size() != points[j].size()) throw DimensionError("points differ in dimension");
      double s = 0.0;
      for (std::size_t d = 0; d < points[i].size(); ++d) s += (points[i][d] - points[j][d]) * (points[i][d] - points[j][d]);
      dist[i][j] = dist[j][i] = std::sqrt(s);
      all_zero = all_zero && s == 0.0;
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, std::size_t>> acc;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      auto& [sum, count] = acc[labels[j]];
      sum += dist[i][j];
      ++count;
    }
    const auto own = acc.find(labels[i]);
    if (own == acc.end()) continue;  // singleton cluster scores 0
    const double a = own->second.first / static_cast<double>(own->second.second);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, sc] : acc) {
      if (label != labels[i]) b = std::min(b, sc.first / static_cast<double>(sc.second));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return {total / static_cast<double>(n), all_zero};
}

DiscriminabilityReport measure_discriminability(const ParamStore& params, const EnhancerConfig& ecfg,
                                                const std::vector<Probe>& probes, int level) {
  if (level < 1 || level > 3) throw ConfigError("level must be 1, 2 or 3");
  std::map<degrade::Kind, std::size_t> counts;
  for (const auto& p : probes) ++counts[p.kind];
  if (counts.size() < 2) throw InputError("discriminability needs probes of at least two kinds");
  for (const auto& [kind, count] : counts) {
    if (count < kMinProbesPerKind) {
      throw InputError("kind " + degrade::to_string(kind) + " has " + std::to_string(count) + " probes, need " +
                       std::to_string(kMinProbesPerKind));
    }
  }

  NoGradGuard no_grad;
  std::vector<std::vector<double>> points;
  std::vector<int> labels;
  DiscriminabilityReport report;
  report.level = level;
  report.samples = probes.size();
  std::map<degrade::Kind, std::vector<double>> sums;
  for (const auto& p : probes) {
    const Tensor f = forward(p.image, params, ecfg).block[level - 1];
    const Shape s = f.shape();
    std::vector<double> e(s.c, 0.0);
    for (int c = 0; c < s.c; ++c) {
      const auto plane = f.data().subspan(static_cast<std::size_t>(c) * s.plane(), s.plane());
      e[c] = std::accumulate(plane.begin(), plane.end(), 0.0) / static_cast<double>(s.plane());
    }
    auto& sum = sums[p.kind];
    if (sum.empty()) sum.assign(e.size(), 0.0);
    for (std::size_t c = 0; c < e.size(); ++c) sum[c] += e[c];
    points.push_back(std::move(e));
    labels.push_back(static_cast<int>(p.kind));
  }
  for (auto& [kind, sum] : sums) {
    for (double& x : sum) x /= static_cast<double>(counts[kind]);
    report.centroids[degrade::to_string(kind)] = sum;
  }
  const auto sil = silhouette(points, labels);
  report.silhouette = sil.score;
  report.degenerate = sil.degenerate;
  return report;
}

std::string to_json(const DiscriminabilityReport& report) {
  json j;
  j["level"] = report.level;
  j["silhouette"] = report.silhouette;
  j["degenerate"] = report.degenerate;
  j["samples"] = report.samples;
  j["centroids"] = report.centroids;
  return j.dump(2);
}

}  // namespace cpa

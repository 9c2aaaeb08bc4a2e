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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cpa/degrade.hpp"
#include "cpa/enhancer.hpp"

namespace cpa {

struct TrainConfig {
  double lr = 0.001;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  int batch = 4;
  int iters = 200;
  std::uint64_t seed = 0;
  std::vector<degrade::Kind> kinds{degrade::Kind::fog, degrade::Kind::dark, degrade::Kind::snow,
                                   degrade::Kind::rain};
  /// Square side every training image is resized to.
  int resolution = 64;
  /// Worker threads for per-sample gradients; the reduction order is fixed.
  int threads = 1;
};

void validate(const TrainConfig& cfg);
std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

/// Config file contents: {"enhancer": {...}, "train": {...}}, both optional.
/// A missing enhancer section means toy_config().
struct RunConfig {
  EnhancerConfig enhancer = toy_config();
  TrainConfig train;
};

RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);

using GradMap = std::map<std::string, std::vector<double>>;

/// Gradients currently held by the leaves of `params`. Throws
/// ConsistencyError if any parameter has none.
GradMap collect_grads(const ParamStore& params);

/// Momentum SGD with weight decay folded into the velocity:
/// v <- m v + g + wd theta, theta <- theta - lr v.
class Sgd {
 public:
  explicit Sgd(const TrainConfig& cfg);
  /// Throws ConsistencyError when `grads` misses a parameter or a size differs.
  void step(ParamStore& params, const GradMap& grads);
  const GradMap& velocity() const { return velocity_; }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  GradMap velocity_;
};

/// Degraded input and clean target, each 1 x 3 x R x R.
struct TrainPair {
  Tensor degraded;
  Tensor clean;
};

/// Loads every manifest entry as (dst, src), resized to `resolution`.
std::vector<TrainPair> load_pairs(const degrade::DatasetManifest& manifest, int resolution);

/// Mean absolute error.
Tensor l1_loss(const Tensor& prediction, const Tensor& target);

struct BatchGradients {
  double loss = 0.0;
  GradMap grads;
};

/// Mean loss and gradient over `batch`. Each sample runs on its own bound
/// copy of the parameters; sums are taken in sample order.
BatchGradients batch_gradients(const ParamStore& params, const EnhancerConfig& ecfg,
                               const std::vector<const TrainPair*>& batch, int threads = 1);
/// Mean loss over all pairs without recording a tape.
double dataset_loss(const ParamStore& params, const EnhancerConfig& ecfg, const std::vector<TrainPair>& pairs);

struct TrainResult {
  ParamStore params;
  std::vector<double> losses;  // batch loss before each step
  double initial_loss = 0.0;   // whole-set loss before training
  double final_loss = 0.0;     // whole-set loss after training
};

using StepCallback = std::function<void(int iter, double loss)>;

/// Minimizes the L1 restoration loss from `init`. Batches are drawn from a
/// seeded reshuffle per pass over the data. Throws NumericalError on a
/// non-finite loss or gradient.
TrainResult train(const std::vector<TrainPair>& pairs, const ParamStore& init, const EnhancerConfig& ecfg,
                  const TrainConfig& cfg, const StepCallback& on_step = {});
/// Loads the manifest and trains from init_params(ecfg, cfg.seed).
TrainResult train_toy(const degrade::DatasetManifest& dataset, const TrainConfig& cfg, const EnhancerConfig& ecfg,
                      const StepCallback& on_step = {});

/// "iter,loss" header then one row per step, full precision.
void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses);

/// Procedural clean scene: sky gradient, flat-shaded shapes and a faint texture.
Image synth_scene(int size, std::uint64_t seed);
/// Writes `count` scenes as scene_NN.png and returns their paths.
std::vector<std::filesystem::path> write_scenes(const std::filesystem::path& dir, int count, int size,
                                                std::uint64_t seed);

/// Builds the standard toy set under `workdir`: `count` scenes in clean/,
/// every one degraded with a kind from `kinds` in round-robin into
/// degraded/, and manifest.jsonl.
degrade::DatasetManifest prepare_toy_dataset(const std::filesystem::path& workdir, int count, int size,
                                             const std::vector<degrade::Kind>& kinds, std::uint64_t seed);

struct Probe {
  Tensor image;  // 1 x 3 x H x W
  degrade::Kind kind = degrade::Kind::none;
};

/// `per_kind` fresh scenes, each degraded by every kind with sampled parameters.
std::vector<Probe> make_probes(int per_kind, int size, const std::vector<degrade::Kind>& kinds, std::uint64_t seed);

struct SilhouetteResult {
  double score = 0.0;
  bool degenerate = false;
};

/// Mean silhouette with Euclidean distance. A point whose cluster spread
/// and nearest-cluster distance are both zero scores 0; the result is
/// flagged degenerate when every point coincides.
SilhouetteResult silhouette(const std::vector<std::vector<double>>& points, const std::vector<int>& labels);

struct DiscriminabilityReport {
  int level = 1;
  double silhouette = 0.0;
  bool degenerate = false;
  std::size_t samples = 0;
  std::map<std::string, std::vector<double>> centroids;
};

/// Embeds each probe as the spatial mean of the level-`level` prompt-block
/// output and scores the grouping by kind. Needs at least 2 kinds with at
/// least 8 probes each, otherwise InputError.
DiscriminabilityReport measure_discriminability(const ParamStore& params, const EnhancerConfig& ecfg,
                                                const std::vector<Probe>& probes, int level);
std::string to_json(const DiscriminabilityReport& report);

inline constexpr int kMinProbesPerKind = 8;

}  // namespace cpa

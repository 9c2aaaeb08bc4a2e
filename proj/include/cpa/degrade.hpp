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
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cpa/image.hpp"

namespace cpa::degrade {

enum class Kind { none, fog, dark, snow, rain, noise };

std::string to_string(Kind kind);
/// Throws ParameterError on unknown names.
Kind parse_kind(const std::string& name);

struct FogParams {
  double A = 0.5;
  int i = 0;
};

struct DarkParams {
  double gamma = 2.0;
};

/// Either an explicit mask file or a procedural mask of the given density
/// ("light", "medium", "heavy") seeded from the spec seed.
struct SnowParams {
  std::string density = "medium";
  std::string mask_path;
};

struct RainFieldOptions {
  double quantile = 0.97;
  double angle_deg = 75.0;
  int length = 12;
};

struct RainParams {
  double beta = 0.8;
  bool overlay = false;
  RainFieldOptions field;
};

struct NoiseParams {
  double sigma = 25.0;
};

using Params = std::variant<std::monostate, FogParams, DarkParams, SnowParams, RainParams, NoiseParams>;

struct DegradationSpec {
  Kind kind = Kind::none;
  Params params;
  std::uint64_t seed = 0;
};

/// Fog with extinction coefficient 0.05 + 0.01 i.
Image apply_fog(const Image& img, double A, int i);
/// Same scattering model with an explicit extinction coefficient.
Image apply_fog_beta(const Image& img, double A, double beta);
Image apply_dark(const Image& img, double gamma);
/// Adds the mask (1 or 3 channels, resized bilinearly if needed).
Image apply_snow(const Image& img, const Image& mask);
/// I (1 - R) + beta I, or I (1 - R) + beta R with `overlay`.
Image apply_rain(const Image& img, double beta, std::uint64_t seed, bool overlay = false,
                 const RainFieldOptions& options = {});
Image blend_rain(const Image& img, const Image& field, double beta, bool overlay = false);
Image apply_noise(const Image& img, double sigma, std::uint64_t seed);

/// Single-channel streak field in [0, 1].
Image rain_field(int height, int width, std::uint64_t seed, const RainFieldOptions& options = {});
/// Standard-normal field drawn in H, W, channel order from a seeded mt19937_64.
std::vector<double> gaussian_field(int height, int width, int channels, std::uint64_t seed);
/// Single-channel procedural snow mask in [0, 1].
Image snow_mask(int height, int width, const std::string& density, std::uint64_t seed);

/// Applies a spec whose params are filled in.
Image apply(const Image& img, const DegradationSpec& spec);

/// Fills params for `kind` by sampling the standard protocol: fog A = 0.5
/// with i uniform in 0..9, gamma uniform in [1.5, 5], rain beta = 0.8,
/// sigma from {15, 25, 50}, medium snow.
DegradationSpec sample_spec(Kind kind, std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

struct ManifestEntry {
  std::string src;
  std::string dst;
  DegradationSpec spec;
  std::optional<std::string> annotation;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

/// Lists the images in `src_dir` (sorted), degrades round(mix * N) of them
/// and passes the rest through as kind none. Degraded images cycle through
/// `specs`; a spec with empty params is sampled per image. Throws
/// InputError when the directory holds no images.
DatasetManifest build_manifest(const std::filesystem::path& src_dir, const std::vector<DegradationSpec>& specs,
                               double mix, std::uint64_t seed, const std::filesystem::path& dst_dir);

std::string params_to_json(const DegradationSpec& spec);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);
/// Reads every source, applies its spec and writes the destination.
void materialize(const DatasetManifest& manifest);

}  // namespace cpa::degrade

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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "cpa/cgm.hpp"
#include "cpa/cpb.hpp"
#include "cpa/image.hpp"
#include "cpa/param_store.hpp"

namespace cpa {

/// Prompt block used at each decoder level.
enum class BlockKind { cpb, spb };

struct EnhancerConfig {
  int base_channels = 16;
  int levels = 4;
  PromptConfig prompt;
  int splits = 4;
  int reduction = 16;
  int heads = 1;
  double expansion = 2.0;
  SigmaMode sigma_mode = SigmaMode::softmax;
  BlockKind block = BlockKind::cpb;
  bool rfa_enabled = true;
  int rfa_kernel = 3;
  DType elem_type = DType::f64;
};

/// Small configuration used by the toy training protocol: C = 8 with an
/// 8 x 8 x 64 initial prompt, so 64 x 64 inputs need no prompt adapters.
EnhancerConfig toy_config();

void validate(const EnhancerConfig& cfg);
/// Channels of decoder level 3 (8C), 2 (4C) and 1 (2C).
int decoder_channels(const EnhancerConfig& cfg, int level);
CpbConfig cpb_config(const EnhancerConfig& cfg, int level);

std::string to_json(const EnhancerConfig& cfg);
EnhancerConfig enhancer_config_from_json(const std::string& text);
EnhancerConfig load_enhancer_config(const std::filesystem::path& path);
void save_enhancer_config(const std::filesystem::path& path, const EnhancerConfig& cfg);

/// Registers `prefix`.{w,b} and, when `attention` is set, the receptive-field
/// attention branch `prefix`.att.{w,b}.
void init_rfa(ParamStore& params, const std::string& prefix, int cin, int cout, int k, bool attention,
              std::mt19937_64& rng);
/// Per-position softmax weights over the k*k receptive field, N x C*k*k x H x W
/// with entries of one input channel contiguous.
Tensor rfa_attention(const Tensor& x, const ParamStore& p, const std::string& prefix, int k);
/// Receptive-field attention conv: unfold k x k fields, weight them by
/// rfa_attention and aggregate with the conv weight as a 1x1 projection.
/// With `enabled` false this is a plain same-padded k x k conv.
Tensor rfa_conv(const Tensor& x, const ParamStore& p, const std::string& prefix, int k, bool enabled);

/// Unit-gain uniform weights, zero biases, N(0, 0.02^2) prompts. The final
/// projection starts at zero, so a fresh network returns its input.
ParamStore init_params(const EnhancerConfig& cfg, std::uint64_t seed);
/// Exact number of learnable scalars.
std::size_t count_params(const EnhancerConfig& cfg);
/// Zeroes the final projection so the network returns its input.
void zero_final_projection(ParamStore& params);
/// Throws ConfigError if names or shapes differ from what `cfg` expects.
void check_compatible(const ParamStore& params, const EnhancerConfig& cfg);

struct EnhancerOutput {
  Tensor image;   // clamp(I_0 + F_e, 0, 1)
  Tensor f0;
  Tensor latent;  // 8C x H/8 x W/8
  Tensor fh;      // 2C x H x W
  Tensor fe;      // 3 x H x W
  std::array<Tensor, 3> block;  // decoder level i prompt-block output at index i - 1
};

/// Runs the network on an N x 3 x H x W batch. Sizes that are not multiples
/// of 8 are zero-padded at the bottom/right and cropped back.
EnhancerOutput forward(const Tensor& input, const ParamStore& params, const EnhancerConfig& cfg);

struct Enhanced {
  Image image;
  EnhancerOutput features;
};

Enhanced enhance(const Image& img, const ParamStore& params, const EnhancerConfig& cfg);

}  // namespace cpa

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
#include <random>

#include "cpa/param_store.hpp"
#include "cpa/tensor.hpp"

namespace cpa {

struct PromptConfig {
  int hat_c = 128;
  int hat_h = 32;
  int hat_w = 32;
  // false selects one free tensor per level instead of the chained pyramid.
  bool chained = true;
};

struct PromptPyramid {
  Tensor p3;
  Tensor p2;
  Tensor p1;
  int hat_h = 0;
  int hat_w = 0;
  int hat_c = 0;

  /// Prompt for decoder level 1, 2 or 3.
  const Tensor& level(int i) const;
};

/// Throws ConfigError unless hat_c is a positive multiple of 4 and the
/// spatial dims are positive.
void validate(const PromptConfig& cfg);

/// Shape of P_i for i in {1, 2, 3}: hat_c / 2^(3-i) channels at
/// 2^(3-i) times the initial resolution.
Shape prompt_shape(const PromptConfig& cfg, int level);

/// Registers cgm.p3 plus cgm.tc2.{w,b} and cgm.tc1.{w,b} (chained) or
/// cgm.p2 and cgm.p1 (independent). Prompts draw from N(0, 0.02^2).
void init_cgm(ParamStore& params, const PromptConfig& cfg, std::mt19937_64& rng);

/// P_i = Hardswish(TC3x3_stride2(P_{i+1})) for i = 2, then 1.
PromptPyramid generate_prompts(const Tensor& p3, const ParamStore& weights);
/// Reads cgm.p3, cgm.p2 and cgm.p1 without any chaining.
PromptPyramid independent_prompts(const ParamStore& weights);
PromptPyramid build_prompts(const ParamStore& weights, const PromptConfig& cfg);

}  // namespace cpa

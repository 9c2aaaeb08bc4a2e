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

#include "cpa/cgm.hpp"

#include "cpa/errors.hpp"
#include "cpa/ops.hpp"

namespace cpa {

namespace {

constexpr double kPromptStd = 0.02;

const Conv2dOptions kUpsample{.stride = 2, .padding = 1, .groups = 1, .transposed = true, .output_padding = 1};

Tensor upsample_stage(const Tensor& p, const ParamStore& weights, const std::string& name) {
  return hardswish(conv2d(p, weights.at(name + ".w"), weights.at(name + ".b"), kUpsample));
}

}  // namespace

const Tensor& PromptPyramid::level(int i) const {
  switch (i) {
    case 1: return p1;
    case 2: return p2;
    case 3: return p3;
    default: throw ConfigError("prompt level must be 1, 2 or 3, got " + std::to_string(i));
  }
}

void validate(const PromptConfig& cfg) {
  if (cfg.hat_c <= 0 || cfg.hat_c % 4 != 0) {
    throw ConfigError("initial prompt channels must be a positive multiple of 4, got " + std::to_string(cfg.hat_c));
  }
  if (cfg.hat_h <= 0 || cfg.hat_w <= 0) throw ConfigError("initial prompt size must be positive");
}

Shape prompt_shape(const PromptConfig& cfg, int level) {
  validate(cfg);
  if (level < 1 || level > 3) throw ConfigError("prompt level must be 1, 2 or 3");
  const int f = 1 << (3 - level);
  return {1, cfg.hat_c / f, cfg.hat_h * f, cfg.hat_w * f};
}

void init_cgm(ParamStore& params, const PromptConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  params.add("cgm.p3", normal_init(prompt_shape(cfg, 3), kPromptStd, rng));
  if (cfg.chained) {
    for (int level : {2, 1}) {
      const int cin = prompt_shape(cfg, level + 1).c;
      const int cout = prompt_shape(cfg, level).c;
      const std::string name = "cgm.tc" + std::to_string(level);
      params.add(name + ".w", lecun_uniform({cin, cout, 3, 3}, cout * 9, rng));
      params.add(name + ".b", Tensor::zeros({1, cout, 1, 1}));
    }
  } else {
    params.add("cgm.p2", normal_init(prompt_shape(cfg, 2), kPromptStd, rng));
    params.add("cgm.p1", normal_init(prompt_shape(cfg, 1), kPromptStd, rng));
  }
}

PromptPyramid generate_prompts(const Tensor& p3, const ParamStore& weights) {
  const Shape s = p3.shape();
  if (s.c % 4 != 0) throw ConfigError("initial prompt channels must be divisible by 4, got " + std::to_string(s.c));
  PromptPyramid out;
  out.p3 = p3;
  out.p2 = upsample_stage(p3, weights, "cgm.tc2");
  out.p1 = upsample_stage(out.p2, weights, "cgm.tc1");
  out.hat_c = s.c;
  out.hat_h = s.h;
  out.hat_w = s.w;
  return out;
}

PromptPyramid independent_prompts(const ParamStore& weights) {
  PromptPyramid out;
  out.p3 = weights.at("cgm.p3");
  out.p2 = weights.at("cgm.p2");
  out.p1 = weights.at("cgm.p1");
  out.hat_c = out.p3.shape().c;
  out.hat_h = out.p3.shape().h;
  out.hat_w = out.p3.shape().w;
  return out;
}

PromptPyramid build_prompts(const ParamStore& weights, const PromptConfig& cfg) {
  return cfg.chained ? generate_prompts(weights.at("cgm.p3"), weights) : independent_prompts(weights);
}

}  // namespace cpa

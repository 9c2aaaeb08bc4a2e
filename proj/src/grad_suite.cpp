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

#include "cpa/grad_suite.hpp"

#include <map>
#include <random>

#include "cpa/cgm.hpp"
#include "cpa/cpb.hpp"
#include "cpa/enhancer.hpp"
#include "cpa/ops.hpp"

namespace cpa {

namespace {

using Forward = std::function<Tensor(const ParamStore&)>;

struct Case {
  std::string name;
  std::function<void(ParamStore&, std::mt19937_64&)> setup;
  Forward fn;
};

// Values in [-1, -0.1] U [0.1, 1], clear of the kinks of relu, abs and clamp.
Tensor input(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::from(shape, std::move(v), true);
}

Tensor positive(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v), true);
}

// Overwrites every block parameter with U(-0.5, 0.5), temperatures with U(0.5, 1.5).
void spread(ParamStore& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::uniform_real_distribution<double> t(0.5, 1.5);
  for (auto& [name, tensor] : p) {
    const bool temperature = name.ends_with("alpha");
    for (double& v : tensor.mutable_data()) v = temperature ? t(rng) : u(rng);
  }
}

void add_input(ParamStore& p, const std::string& name, Shape shape, std::mt19937_64& rng) {
  p.add(name, input(shape, rng));
}

Case unary(const std::string& name, Shape shape, std::function<Tensor(const Tensor&)> op) {
  return {name, [shape](ParamStore& p, std::mt19937_64& rng) { add_input(p, "x", shape, rng); },
          [op](const ParamStore& p) { return op(p.at("x")); }};
}

Case binary(const std::string& name, Shape a, Shape b, std::function<Tensor(const Tensor&, const Tensor&)> op) {
  return {name,
          [a, b](ParamStore& p, std::mt19937_64& rng) {
            add_input(p, "a", a, rng);
            add_input(p, "b", b, rng);
          },
          [op](const ParamStore& p) { return op(p.at("a"), p.at("b")); }};
}

std::vector<Case> cases() {
  std::vector<Case> out;
  const Shape s{1, 4, 5, 6};

  out.push_back({"conv2d",
                 [](ParamStore& p, std::mt19937_64& rng) {
                   add_input(p, "x", {1, 4, 8, 8}, rng);
                   add_input(p, "w", {6, 4, 3, 3}, rng);
                   add_input(p, "b", {1, 6, 1, 1}, rng);
                 },
                 [](const ParamStore& p) { return conv2d(p.at("x"), p.at("w"), p.at("b"), {.padding = 1}); }});
  out.push_back({"conv2d_grouped_strided",
                 [](ParamStore& p, std::mt19937_64& rng) {
                   add_input(p, "x", {1, 4, 8, 8}, rng);
                   add_input(p, "w", {4, 2, 3, 3}, rng);
                 },
                 [](const ParamStore& p) {
                   return conv2d(p.at("x"), p.at("w"), {}, {.stride = 2, .padding = 1, .groups = 2});
                 }});
  out.push_back({"conv_transpose2d",
                 [](ParamStore& p, std::mt19937_64& rng) {
                   add_input(p, "x", {1, 4, 4, 4}, rng);
                   add_input(p, "w", {4, 3, 3, 3}, rng);
                   add_input(p, "b", {1, 3, 1, 1}, rng);
                 },
                 [](const ParamStore& p) {
                   return conv2d(p.at("x"), p.at("w"), p.at("b"),
                                 {.stride = 2, .padding = 1, .transposed = true, .output_padding = 1});
                 }});
  out.push_back(unary("unfold", {1, 3, 5, 5}, [](const Tensor& x) { return unfold(x, 3); }));
  out.push_back(unary("relu", s, relu));
  out.push_back(unary("gelu", s, gelu));
  out.push_back(unary("hardswish", s, [](const Tensor& x) { return hardswish(scale(x, 2.0)); }));
  out.push_back(unary("sigmoid", s, sigmoid));
  out.push_back(binary("add", s, {1, 4, 1, 1}, add));
  out.push_back(binary("sub", s, {1, 1, 5, 6}, sub));
  out.push_back(binary("mul", s, {1, 4, 1, 6}, mul));
  out.push_back({"div",
                 [s](ParamStore& p, std::mt19937_64& rng) {
                   add_input(p, "a", s, rng);
                   p.add("b", positive({1, 4, 5, 1}, rng));
                 },
                 [](const ParamStore& p) { return div(p.at("a"), p.at("b")); }});
  out.push_back(unary("scale", s, [](const Tensor& x) { return scale(x, -1.7); }));
  out.push_back(unary("add_scalar", s, [](const Tensor& x) { return mul(add_scalar(x, 0.3), x); }));
  out.push_back(unary("abs", s, [](const Tensor& x) { return abs(x); }));
  out.push_back(unary("clamp", s, [](const Tensor& x) { return clamp(x, -0.55, 0.6); }));
  out.push_back(unary("gap_spatial", s, [](const Tensor& x) { return pool(x, PoolKind::gap_spatial); }));
  out.push_back(unary("gap_channel", s, [](const Tensor& x) { return pool(x, PoolKind::gap_channel); }));
  out.push_back(unary("gmp_channel", s, [](const Tensor& x) { return pool(x, PoolKind::gmp_channel); }));
  out.push_back(unary("sum", s, [](const Tensor& x) { return mul(sum(x), sum(x)); }));
  out.push_back(unary("mean", s, [](const Tensor& x) { return mul(mean(x), mean(x)); }));
  out.push_back({"layer_norm",
                 [s](ParamStore& p, std::mt19937_64& rng) {
                   add_input(p, "x", s, rng);
                   p.add("g", positive({1, 4, 1, 1}, rng));
                   add_input(p, "b", {1, 4, 1, 1}, rng);
                 },
                 [](const ParamStore& p) { return layer_norm(p.at("x"), p.at("g"), p.at("b")); }});
  out.push_back(unary("softmax_channels", s, [](const Tensor& x) { return softmax(x, 1); }));
  out.push_back(unary("softmax_rows", s, [](const Tensor& x) { return softmax(x, 3); }));
  out.push_back(unary("l2_normalize", s, [](const Tensor& x) { return l2_normalize(x, 3); }));
  out.push_back(binary("matmul", {1, 2, 3, 5}, {1, 2, 5, 4}, [](const Tensor& a, const Tensor& b) {
    return matmul(a, b);
  }));
  out.push_back(binary("matmul_transposed", {1, 2, 5, 3}, {1, 2, 4, 5}, [](const Tensor& a, const Tensor& b) {
    return matmul(a, b, true, true);
  }));
  out.push_back(unary("bilinear_up", {1, 2, 4, 3}, [](const Tensor& x) { return bilinear_rescale(x, 8, 7); }));
  out.push_back(unary("bilinear_down", {1, 2, 8, 8}, [](const Tensor& x) { return bilinear_rescale(x, 3, 5); }));
  out.push_back(unary("channel_shuffle", {1, 8, 3, 3}, [](const Tensor& x) { return channel_shuffle(x, 2); }));
  out.push_back(binary("concat_channels", {1, 2, 3, 4}, {1, 3, 3, 4}, [](const Tensor& a, const Tensor& b) {
    return concat_channels({a, b});
  }));
  out.push_back(unary("slice_channels", {1, 6, 3, 3}, [](const Tensor& x) { return slice_channels(x, 1, 4); }));
  out.push_back(unary("reshape", {1, 4, 3, 4}, [](const Tensor& x) { return reshape(x, {1, 2, 6, 4}); }));
  out.push_back(unary("pad2d", {1, 2, 3, 4}, [](const Tensor& x) { return pad2d(x, 1, 2, 0, 3); }));
  out.push_back(unary("crop2d", {1, 2, 6, 6}, [](const Tensor& x) { return crop2d(x, 1, 2, 4, 3); }));

  // Composite blocks.
  const CpbConfig block{.channels = 8, .splits = 2, .reduction = 2};
  auto with_block = [](const CpbConfig& cfg) {
    return [cfg](ParamStore& p, std::mt19937_64& rng) {
      init_cpb(p, "blk", cfg, rng);
      spread(p, rng);
      add_input(p, "f", {1, cfg.channels, 8, 8}, rng);
      add_input(p, "prompt", {1, cfg.channels, 4, 4}, rng);
    };
  };
  out.push_back({"channel_attention", with_block(block),
                 [](const ParamStore& p) { return channel_attention(p.at("f"), p, "blk"); }});
  out.push_back({"spatial_attention", with_block(block),
                 [](const ParamStore& p) { return spatial_attention(p.at("f"), p, "blk"); }});
  out.push_back({"fuse_prompt", with_block(block),
                 [](const ParamStore& p) { return fuse_prompt(p.at("f"), p.at("prompt"), p, "blk"); }});
  auto part = [](const ParamStore& p) { return slice_channels(p.at("f"), 0, 4); };
  out.push_back({"mdta", with_block(block),
                 [part](const ParamStore& p) { return mdta(part(p), p, "blk.part0.mdta", 1, SigmaMode::softmax); }});
  out.push_back({"mdta_sigmoid_heads", with_block(block),
                 [part](const ParamStore& p) { return mdta(part(p), p, "blk.part0.mdta", 2, SigmaMode::sigmoid); }});
  out.push_back({"gdfn", with_block(block), [part](const ParamStore& p) { return gdfn(part(p), p, "blk.part1.gdfn"); }});
  out.push_back({"cpb", with_block(block),
                 [block](const ParamStore& p) { return cpb_forward(p.at("f"), p.at("prompt"), block, p, "blk"); }});
  const CpbConfig four{.channels = 8, .splits = 4, .reduction = 2, .heads = 2, .sigma_mode = SigmaMode::sigmoid};
  out.push_back({"cpb_four_parts_sigmoid", with_block(four),
                 [four](const ParamStore& p) { return cpb_forward(p.at("f"), p.at("prompt"), four, p, "blk"); }});
  out.push_back({"spb",
                 [](ParamStore& p, std::mt19937_64& rng) {
                   init_spb(p, "s", 8, rng);
                   spread(p, rng);
                   add_input(p, "f", {1, 8, 8, 8}, rng);
                   add_input(p, "prompt", {1, 8, 4, 4}, rng);
                 },
                 [](const ParamStore& p) { return spb_forward(p.at("f"), p.at("prompt"), p, "s"); }});
  out.push_back({"cgm_chain",
                 [](ParamStore& p, std::mt19937_64& rng) {
                   init_cgm(p, {.hat_c = 8, .hat_h = 2, .hat_w = 2}, rng);
                   spread(p, rng);
                 },
                 [](const ParamStore& p) {
                   const PromptPyramid pp = generate_prompts(p.at("cgm.p3"), p);
                   return concat_channels({reshape(pp.p2, {1, 64, 1, 1}), reshape(pp.p1, {1, 128, 1, 1}),
                                           reshape(pp.p3, {1, 32, 1, 1})});
                 }});
  out.push_back({"rfa_conv",
                 [](ParamStore& p, std::mt19937_64& rng) {
                   init_rfa(p, "r", 4, 5, 3, true, rng);
                   spread(p, rng);
                   add_input(p, "x", {1, 4, 8, 8}, rng);
                 },
                 [](const ParamStore& p) { return rfa_conv(p.at("x"), p, "r", 3, true); }});
  return out;
}

}  // namespace

std::vector<std::string> grad_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.name);
  return names;
}

std::vector<GradCheckReport> run_grad_suite(double tol, std::uint64_t seed, const std::string& filter,
                                            const std::function<void(const GradCheckReport&)>& on_report) {
  std::vector<GradCheckReport> reports;
  std::uint64_t index = 0;
  for (const auto& c : cases()) {
    ++index;
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + index);
    ParamStore params;
    c.setup(params, rng);
    // Fixed random projection to a scalar so every output element counts.
    Tensor projection;
    {
      NoGradGuard no_grad;
      const Shape out = c.fn(params).shape();
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      std::vector<double> v(out.numel());
      for (double& x : v) x = u(rng);
      projection = Tensor::from(out, std::move(v));
    }
    const Forward fn = c.fn;
    GradCheckOptions options;
    options.seed = seed + index;
    reports.push_back(grad_check(
        c.name, [&](const ParamStore& p) { return sum(mul(fn(p), projection)); }, params, tol, options));
    if (on_report) on_report(reports.back());
  }
  return reports;
}

}  // namespace cpa

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

#include "cpa/cpb.hpp"

#include <cmath>

#include "cpa/errors.hpp"
#include "cpa/ops.hpp"

namespace cpa {

namespace {

Conv2dOptions same(int k, int groups = 1) { return {.stride = 1, .padding = k / 2, .groups = groups}; }

Tensor pointwise(const Tensor& x, const ParamStore& p, const std::string& name, bool bias) {
  return conv2d(x, p.at(name + ".w"), bias ? p.at(name + ".b") : Tensor{});
}

Tensor depthwise3(const Tensor& x, const ParamStore& p, const std::string& name) {
  return conv2d(x, p.at(name + ".w"), {}, same(3, x.shape().c));
}

void add_conv(ParamStore& params, const std::string& name, int cout, int cin_per_group, int k, bool bias,
              std::mt19937_64& rng) {
  params.add(name + ".w", lecun_uniform({cout, cin_per_group, k, k}, cin_per_group * k * k, rng));
  if (bias) params.add(name + ".b", Tensor::zeros({1, cout, 1, 1}));
}

void add_layer_norm(ParamStore& params, const std::string& name, int c) {
  params.add(name + ".g", Tensor::full({1, c, 1, 1}, 1.0));
  params.add(name + ".b", Tensor::zeros({1, c, 1, 1}));
}

Tensor norm(const Tensor& x, const ParamStore& p, const std::string& name) {
  return layer_norm(x, p.at(name + ".g"), p.at(name + ".b"));
}

// pointwise then 3x3 depthwise, as used for Q, K, V and the GDFN branches.
Tensor pw_dw(const Tensor& x, const ParamStore& p, const std::string& name) {
  return depthwise3(pointwise(x, p, name + ".pw", false), p, name + ".dw");
}

void check_prompt(const Tensor& f, const Tensor& prompt, const char* block) {
  if (prompt.shape().c != f.shape().c) {
    throw ConfigError(std::string(block) + ": prompt has " + std::to_string(prompt.shape().c) +
                      " channels but the feature has " + std::to_string(f.shape().c));
  }
}

Tensor rescale_like(const Tensor& prompt, const Tensor& f) {
  return bilinear_rescale(prompt, f.shape().h, f.shape().w);
}

// Attention from the already normalised input y.
Tensor attention_from(const Tensor& y, const ParamStore& p, const std::string& prefix, int heads, SigmaMode mode) {
  const Shape s = y.shape();
  if (heads < 1 || s.c % heads != 0) {
    throw ConfigError("heads=" + std::to_string(heads) + " must divide " + std::to_string(s.c) + " channels");
  }
  const Shape per_head{s.n, heads, s.c / heads, s.h * s.w};
  // Unit-length channel descriptors along the spatial axis.
  const Tensor q = l2_normalize(reshape(pw_dw(y, p, prefix + ".q"), per_head), 3);
  const Tensor k = l2_normalize(reshape(pw_dw(y, p, prefix + ".k"), per_head), 3);
  const Tensor logits = div(matmul(q, k, false, true), p.at(prefix + ".alpha"));
  return mode == SigmaMode::softmax ? softmax(logits, 3) : sigmoid(logits);
}

}  // namespace

SigmaMode parse_sigma_mode(std::string_view name) {
  if (name == "softmax") return SigmaMode::softmax;
  if (name == "sigmoid") return SigmaMode::sigmoid;
  throw ConfigError("unknown sigma mode '" + std::string(name) + "' (softmax, sigmoid)");
}

std::string to_string(SigmaMode mode) { return mode == SigmaMode::softmax ? "softmax" : "sigmoid"; }

void validate(const CpbConfig& cfg) {
  if (cfg.channels <= 0) throw ConfigError("CPB channels must be positive");
  if (cfg.splits < 1 || cfg.channels % cfg.splits != 0) {
    throw ConfigError("splits n=" + std::to_string(cfg.splits) + " must divide " + std::to_string(cfg.channels) +
                      " channels");
  }
  if (cfg.reduction < 1 || cfg.channels % cfg.reduction != 0) {
    throw ConfigError("reduction r=" + std::to_string(cfg.reduction) + " must divide " +
                      std::to_string(cfg.channels) + " channels");
  }
  const int part = cfg.channels / cfg.splits;
  if (cfg.heads < 1 || part % cfg.heads != 0) {
    throw ConfigError("heads=" + std::to_string(cfg.heads) + " must divide the " + std::to_string(part) +
                      " channels of each part");
  }
  if (!(cfg.expansion > 0.0) || gdfn_hidden(part, cfg.expansion) < 1) {
    throw ConfigError("GDFN expansion must give at least one hidden channel");
  }
}

int gdfn_hidden(int channels, double expansion) { return static_cast<int>(channels * expansion); }

void init_cpb(ParamStore& params, const std::string& prefix, const CpbConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  const int c = cfg.channels;
  add_conv(params, prefix + ".ca.l1", c / cfg.reduction, c, 1, true, rng);
  add_conv(params, prefix + ".ca.l2", c, c / cfg.reduction, 1, true, rng);
  add_conv(params, prefix + ".sa", c, 2, 7, true, rng);
  add_conv(params, prefix + ".fuse.dw", 2 * c, 1, 7, true, rng);
  add_conv(params, prefix + ".fuse.pw", c, 2 * c, 1, true, rng);
  add_conv(params, prefix + ".proj", c, 2 * c, 1, true, rng);

  const int pc = c / cfg.splits;
  const int hidden = gdfn_hidden(pc, cfg.expansion);
  for (int j = 0; j < cfg.splits; ++j) {
    const std::string part = prefix + ".part" + std::to_string(j);
    const std::string m = part + ".mdta";
    add_layer_norm(params, m + ".ln", pc);
    for (const char* qkv : {".q", ".k", ".v"}) {
      add_conv(params, m + qkv + ".pw", pc, pc, 1, false, rng);
      add_conv(params, m + qkv + ".dw", pc, 1, 3, false, rng);
    }
    params.add(m + ".alpha", Tensor::full({1, 1, 1, 1}, 1.0));
    add_conv(params, m + ".out", pc, pc, 1, false, rng);

    const std::string g = part + ".gdfn";
    add_layer_norm(params, g + ".ln", pc);
    add_conv(params, g + ".x1.pw", hidden, pc, 1, false, rng);
    add_conv(params, g + ".x1.dw", hidden, 1, 3, false, rng);
    add_conv(params, g + ".x2.pw", hidden, pc, 1, false, rng);
    add_conv(params, g + ".x2.dw", hidden, 1, 3, false, rng);
    add_conv(params, g + ".out", pc, hidden, 1, false, rng);
  }
}

Tensor channel_attention(const Tensor& f, const ParamStore& p, const std::string& prefix) {
  const Tensor g = pool(f, PoolKind::gap_spatial);
  return pointwise(relu(pointwise(g, p, prefix + ".ca.l1", true)), p, prefix + ".ca.l2", true);
}

Tensor spatial_attention(const Tensor& f, const ParamStore& p, const std::string& prefix) {
  const Tensor stats = concat_channels({pool(f, PoolKind::gap_channel), pool(f, PoolKind::gmp_channel)});
  return conv2d(stats, p.at(prefix + ".sa.w"), p.at(prefix + ".sa.b"), same(7));
}

Tensor fuse_prompt(const Tensor& f, const Tensor& prompt, const ParamStore& p, const std::string& prefix) {
  check_prompt(f, prompt, "fuse_prompt");
  const int c = f.shape().c;
  const Tensor w = add(channel_attention(f, p, prefix), spatial_attention(f, p, prefix));
  const Tensor fw = concat_channels({mul(w, f), f});
  const Tensor dw = conv2d(channel_shuffle(fw, 2), p.at(prefix + ".fuse.dw.w"), p.at(prefix + ".fuse.dw.b"),
                           same(7, 2 * c));
  const Tensor fs = sigmoid(pointwise(dw, p, prefix + ".fuse.pw", true));
  return pointwise(concat_channels({f, add(rescale_like(prompt, f), fs)}), p, prefix + ".proj", true);
}

Tensor mdta_attention(const Tensor& x, const ParamStore& p, const std::string& prefix, int heads, SigmaMode mode) {
  return attention_from(norm(x, p, prefix + ".ln"), p, prefix, heads, mode);
}

Tensor mdta(const Tensor& x, const ParamStore& p, const std::string& prefix, int heads, SigmaMode mode) {
  const Shape s = x.shape();
  const Tensor y = norm(x, p, prefix + ".ln");
  const Tensor attn = attention_from(y, p, prefix, heads, mode);
  const Tensor v = reshape(pw_dw(y, p, prefix + ".v"), {s.n, heads, s.c / heads, s.h * s.w});
  const Tensor mixed = reshape(matmul(attn, v), s);
  return add(pointwise(mixed, p, prefix + ".out", false), x);
}

Tensor gdfn(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  const Tensor y = norm(x, p, prefix + ".ln");
  const Tensor x1 = gelu(pw_dw(y, p, prefix + ".x1"));
  const Tensor x2 = pw_dw(y, p, prefix + ".x2");
  return add(pointwise(mul(x1, x2), p, prefix + ".out", false), x);
}

Tensor cpb_forward(const Tensor& f, const Tensor& prompt, const CpbConfig& cfg, const ParamStore& p,
                   const std::string& prefix) {
  validate(cfg);
  if (f.shape().c != cfg.channels) {
    throw ConfigError("CPB configured for " + std::to_string(cfg.channels) + " channels, got " + f.shape().str());
  }
  const Tensor fp = fuse_prompt(f, prompt, p, prefix);
  std::vector<Tensor> parts = split_channels(fp, cfg.splits);
  for (int j = 0; j < cfg.splits; ++j) {
    const std::string part = prefix + ".part" + std::to_string(j);
    parts[j] = gdfn(mdta(parts[j], p, part + ".mdta", cfg.heads, cfg.sigma_mode), p, part + ".gdfn");
  }
  return concat_channels(parts);
}

void init_spb(ParamStore& params, const std::string& prefix, int channels, std::mt19937_64& rng) {
  add_conv(params, prefix + ".proj", channels, 2 * channels, 1, true, rng);
}

Tensor spb_forward(const Tensor& f, const Tensor& prompt, const ParamStore& p, const std::string& prefix) {
  check_prompt(f, prompt, "spb_forward");
  return pointwise(concat_channels({f, mul(f, rescale_like(prompt, f))}), p, prefix + ".proj", true);
}

}  // namespace cpa

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

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cpa/param_store.hpp"
#include "cpa/tensor.hpp"

namespace cpa {

/// Normalisation of the channel-attention logits.
enum class SigmaMode { softmax, sigmoid };

SigmaMode parse_sigma_mode(std::string_view name);
std::string to_string(SigmaMode mode);

struct CpbConfig {
  int channels = 16;
  int splits = 4;
  int reduction = 16;
  int heads = 1;
  double expansion = 2.0;
  SigmaMode sigma_mode = SigmaMode::softmax;
};

/// Throws ConfigError when splits, reduction or heads do not divide the
/// channel counts they partition.
void validate(const CpbConfig& cfg);

/// GDFN hidden width for a part with `channels` channels.
int gdfn_hidden(int channels, double expansion);

/// Registers every CPB parameter under `prefix`. Transformer projections
/// are bias-free.
void init_cpb(ParamStore& params, const std::string& prefix, const CpbConfig& cfg, std::mt19937_64& rng);

/// W_c = conv1x1(ReLU(conv1x1(GAP(f)))), C -> C/r -> C, shape N x C x 1 x 1.
Tensor channel_attention(const Tensor& f, const ParamStore& p, const std::string& prefix);
/// W_s = conv7x7([mean_c(f), max_c(f)]), 2 -> C channels.
Tensor spatial_attention(const Tensor& f, const ParamStore& p, const std::string& prefix);
/// F_p = conv1x1([f, Rescale(prompt) + F_s]) with
/// F_s = sigmoid(pw(dw7x7(shuffle([(W_c + W_s) f, f], 2)))).
Tensor fuse_prompt(const Tensor& f, const Tensor& prompt, const ParamStore& p, const std::string& prefix);

/// Normalised channel-attention map, N x heads x d x d with d = C / heads.
/// Row i holds the weights of query channel i over the key channels.
Tensor mdta_attention(const Tensor& x, const ParamStore& p, const std::string& prefix, int heads, SigmaMode mode);
/// Transposed self-attention with residual: out(attn V) + x.
Tensor mdta(const Tensor& x, const ParamStore& p, const std::string& prefix, int heads, SigmaMode mode);
/// Gated feed-forward with residual: out(GELU(X1) * X2) + x.
Tensor gdfn(const Tensor& x, const ParamStore& p, const std::string& prefix);

/// Fuse, split into cfg.splits parts, run MDTA then GDFN per part and
/// concatenate in part order.
Tensor cpb_forward(const Tensor& f, const Tensor& prompt, const CpbConfig& cfg, const ParamStore& p,
                   const std::string& prefix);

/// Baseline block: conv1x1([f, f * Rescale(prompt)]).
void init_spb(ParamStore& params, const std::string& prefix, int channels, std::mt19937_64& rng);
Tensor spb_forward(const Tensor& f, const Tensor& prompt, const ParamStore& p, const std::string& prefix);

}  // namespace cpa

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

#include <span>
#include <string_view>
#include <vector>

#include "cpa/tensor.hpp"

namespace cpa {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
  // Transposed mode: stride is the upsampling factor and the weight is laid
  // out as Cin x (Cout/groups) x k x k.
  bool transposed = false;
  int output_padding = 0;
};

/// Shape produced by conv2d for the given input/weight, or DimensionError /
/// ConfigError when they are inconsistent.
Shape conv2d_output_shape(const Shape& input, const Shape& weight, const Conv2dOptions& opt);

/// Cross-correlation (or its adjoint when transposed). `bias` may be an
/// undefined tensor; otherwise it holds one value per output channel.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
              const Conv2dOptions& opt = {});

/// k x k patches at stride 1 with zero padding k/2: N x (C*k*k) x H x W,
/// channel index c*k*k + ky*k + kx.
Tensor unfold(const Tensor& x, int k);

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

enum class Activation { relu, gelu, hardswish, sigmoid };

Activation parse_activation(std::string_view name);
Tensor activate(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activate(x, Activation::relu); }
inline Tensor gelu(const Tensor& x) { return activate(x, Activation::gelu); }
inline Tensor hardswish(const Tensor& x) { return activate(x, Activation::hardswish); }
inline Tensor sigmoid(const Tensor& x) { return activate(x, Activation::sigmoid); }

/// Binary ops broadcast any axis whose extent is 1 on one side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor abs(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---------------------------------------------------------------------------
// Reductions and normalisation
// ---------------------------------------------------------------------------

enum class PoolKind { gap_spatial, gap_channel, gmp_channel };

PoolKind parse_pool(std::string_view name);
/// gap_spatial: N x C x 1 x 1 mean over H, W. gap_channel / gmp_channel:
/// N x 1 x H x W mean / max over C.
Tensor pool(const Tensor& x, PoolKind kind);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Normalises over channels at each (n, h, w); gamma/beta are 1 x C x 1 x 1.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// Numerically stable softmax along `axis` (0..3).
Tensor softmax(const Tensor& x, int axis);

/// x / max(||x||_2, eps) along `axis`.
Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12);

/// Batched over (n, c): op(a) is rows x inner, op(b) is inner x cols.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

/// Align-corners-false bilinear resampling to out_h x out_w.
Tensor bilinear_rescale(const Tensor& x, int out_h, int out_w);

/// Output channel c reads input channel (c mod g) * (C/g) + c / g.
Tensor channel_shuffle(const Tensor& x, int groups);

Tensor concat_channels(std::span<const Tensor> parts);
inline Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}
Tensor slice_channels(const Tensor& x, int begin, int end);
/// `parts` equal contiguous channel blocks, in order.
std::vector<Tensor> split_channels(const Tensor& x, int parts);

/// Reinterprets the contiguous storage under a new shape of equal size.
Tensor reshape(const Tensor& x, Shape shape);

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right);
Tensor crop2d(const Tensor& x, int top, int left, int height, int width);

}  // namespace cpa

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

// Straight-line reference implementations used only by tests. Nothing here
// shares code with the library's fast paths.

#pragma once

#include <cmath>
#include <vector>

namespace cpa::oracle {

struct Dims {
  int n, c, h, w;
  int size() const { return n * c * h * w; }
  int idx(int in, int ic, int iy, int ix) const { return ((in * c + ic) * h + iy) * w + ix; }
};

/// Nested-loop cross-correlation. Weight is cout x (cin/groups) x k x k.
inline std::vector<double> conv2d(const std::vector<double>& x, Dims xd, const std::vector<double>& w, int cout,
                                  int k, const std::vector<double>* bias, int stride, int pad, int groups,
                                  Dims* out_dims = nullptr) {
  const int ho = (xd.h + 2 * pad - k) / stride + 1;
  const int wo = (xd.w + 2 * pad - k) / stride + 1;
  Dims od{xd.n, cout, ho, wo};
  std::vector<double> y(od.size(), 0.0);
  const int cin_g = xd.c / groups;
  const int cout_g = cout / groups;
  for (int n = 0; n < xd.n; ++n)
    for (int co = 0; co < cout; ++co) {
      const int g = co / cout_g;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= xd.h || ix < 0 || ix >= xd.w) continue;
                acc += x[xd.idx(n, g * cin_g + ci, iy, ix)] * w[((co * cin_g + ci) * k + ky) * k + kx];
              }
          y[od.idx(n, co, oy, ox)] = acc;
        }
    }
  if (out_dims) *out_dims = od;
  return y;
}

/// Nested-loop transposed convolution (scatter form). Weight is
/// cin x (cout/groups) x k x k.
inline std::vector<double> conv_transpose2d(const std::vector<double>& x, Dims xd, const std::vector<double>& w,
                                            int cout, int k, const std::vector<double>* bias, int stride, int pad,
                                            int output_padding, int groups, Dims* out_dims = nullptr) {
  const int ho = (xd.h - 1) * stride - 2 * pad + k + output_padding;
  const int wo = (xd.w - 1) * stride - 2 * pad + k + output_padding;
  Dims od{xd.n, cout, ho, wo};
  std::vector<double> y(od.size(), 0.0);
  const int cin_g = xd.c / groups;
  const int cout_g = cout / groups;
  for (int n = 0; n < xd.n; ++n)
    for (int ci = 0; ci < xd.c; ++ci) {
      const int g = ci / cin_g;
      for (int iy = 0; iy < xd.h; ++iy)
        for (int ix = 0; ix < xd.w; ++ix)
          for (int co = 0; co < cout_g; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * stride - pad + ky;
                const int ox = ix * stride - pad + kx;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                y[od.idx(n, g * cout_g + co, oy, ox)] +=
                    x[xd.idx(n, ci, iy, ix)] * w[((ci * cout_g + co) * k + ky) * k + kx];
              }
    }
  if (bias) {
    for (int n = 0; n < od.n; ++n)
      for (int c = 0; c < od.c; ++c)
        for (int i = 0; i < ho * wo; ++i) y[(n * od.c + c) * ho * wo + i] += (*bias)[c];
  }
  if (out_dims) *out_dims = od;
  return y;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }
inline double hardswish(double v) { return v * std::fmin(std::fmax(v + 3.0, 0.0), 6.0) / 6.0; }

}  // namespace cpa::oracle

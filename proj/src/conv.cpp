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

#include <algorithm>
#include <vector>

#include "cpa/errors.hpp"
#include "cpa/ops.hpp"
#include "gemm.hpp"

namespace cpa {

namespace {

// Geometry of one sliding-window pass: an image of `channels` x h x w read
// on a grid of out_h x out_w windows.
struct Window {
  int channels;
  int h, w;
  int k;
  int stride;
  int pad;
  int out_h, out_w;

  std::size_t rows() const { return static_cast<std::size_t>(channels) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(out_h) * out_w; }
};

void im2col(const double* img, const Window& g, double* col) {
  const std::size_t cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, const Window& g, double* img) {
  const std::size_t cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Window& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

struct ConvPlan {
  int n;
  int in_c, out_c;
  int groups;
  int in_cg, out_cg;  // per group
  int k;
  // Window over the *larger* image: the input for regular conv, the output
  // for transposed conv.
  Window win;
  std::size_t in_plane, out_plane;
};

ConvPlan make_plan(const Shape& x, const Shape& wt, const Conv2dOptions& opt, const Shape& out) {
  ConvPlan p{};
  p.n = x.n;
  p.in_c = x.c;
  p.out_c = out.c;
  p.groups = opt.groups;
  p.in_cg = x.c / opt.groups;
  p.out_cg = out.c / opt.groups;
  p.k = wt.h;
  if (!opt.transposed) {
    p.win = Window{p.in_cg, x.h, x.w, p.k, opt.stride, opt.padding, out.h, out.w};
  } else {
    p.win = Window{p.out_cg, out.h, out.w, p.k, opt.stride, opt.padding, x.h, x.w};
  }
  p.in_plane = x.plane();
  p.out_plane = out.plane();
  return p;
}

// Regular conv: y_g = W_g (out_cg x in_cg*k*k) * col(x_g).
void conv_forward(const ConvPlan& p, const double* x, const double* w, double* y) {
  const Window& g = p.win;
  std::vector<double> col(is_pointwise(g) ? 0 : g.rows() * g.cols());
  const std::size_t wg = static_cast<std::size_t>(p.out_cg) * g.rows();
  for (int n = 0; n < p.n; ++n) {
    for (int grp = 0; grp < p.groups; ++grp) {
      const double* xg = x + (static_cast<std::size_t>(n) * p.in_c + grp * p.in_cg) * p.in_plane;
      double* yg = y + (static_cast<std::size_t>(n) * p.out_c + grp * p.out_cg) * p.out_plane;
      const double* src = xg;
      if (!is_pointwise(g)) {
        im2col(xg, g, col.data());
        src = col.data();
      }
      detail::gemm_acc(false, false, p.out_cg, g.cols(), g.rows(), w + grp * wg, src, yg);
    }
  }
}

void conv_backward(const ConvPlan& p, const double* x, const double* w, const double* dy, double* dx,
                   double* dw) {
  const Window& g = p.win;
  std::vector<double> col(is_pointwise(g) ? 0 : g.rows() * g.cols());
  std::vector<double> dcol(dx && !is_pointwise(g) ? g.rows() * g.cols() : 0);
  const std::size_t wg = static_cast<std::size_t>(p.out_cg) * g.rows();
  for (int n = 0; n < p.n; ++n) {
    for (int grp = 0; grp < p.groups; ++grp) {
      const double* xg = x + (static_cast<std::size_t>(n) * p.in_c + grp * p.in_cg) * p.in_plane;
      const double* dyg = dy + (static_cast<std::size_t>(n) * p.out_c + grp * p.out_cg) * p.out_plane;
      if (dw) {
        const double* src = xg;
        if (!is_pointwise(g)) {
          im2col(xg, g, col.data());
          src = col.data();
        }
        detail::gemm_acc(false, true, p.out_cg, g.rows(), g.cols(), dyg, src, dw + grp * wg);
      }
      if (dx) {
        double* dxg = dx + (static_cast<std::size_t>(n) * p.in_c + grp * p.in_cg) * p.in_plane;
        if (is_pointwise(g)) {
          detail::gemm_acc(true, false, g.rows(), g.cols(), p.out_cg, w + grp * wg, dyg, dxg);
        } else {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          detail::gemm_acc(true, false, g.rows(), g.cols(), p.out_cg, w + grp * wg, dyg, dcol.data());
          col2im_acc(dcol.data(), g, dxg);
        }
      }
    }
  }
}

// Transposed conv: y_g = col2im(W_g^T * x_g), W_g is in_cg x (out_cg*k*k).
void deconv_forward(const ConvPlan& p, const double* x, const double* w, double* y) {
  const Window& g = p.win;
  std::vector<double> col(g.rows() * g.cols());
  const std::size_t wg = static_cast<std::size_t>(p.in_cg) * g.rows();
  for (int n = 0; n < p.n; ++n) {
    for (int grp = 0; grp < p.groups; ++grp) {
      const double* xg = x + (static_cast<std::size_t>(n) * p.in_c + grp * p.in_cg) * p.in_plane;
      double* yg = y + (static_cast<std::size_t>(n) * p.out_c + grp * p.out_cg) * p.out_plane;
      if (is_pointwise(g)) {
        detail::gemm_acc(true, false, g.rows(), g.cols(), p.in_cg, w + grp * wg, xg, yg);
      } else {
        std::fill(col.begin(), col.end(), 0.0);
        detail::gemm_acc(true, false, g.rows(), g.cols(), p.in_cg, w + grp * wg, xg, col.data());
        col2im_acc(col.data(), g, yg);
      }
    }
  }
}

void deconv_backward(const ConvPlan& p, const double* x, const double* w, const double* dy, double* dx,
                     double* dw) {
  const Window& g = p.win;
  std::vector<double> col(is_pointwise(g) ? 0 : g.rows() * g.cols());
  const std::size_t wg = static_cast<std::size_t>(p.in_cg) * g.rows();
  for (int n = 0; n < p.n; ++n) {
    for (int grp = 0; grp < p.groups; ++grp) {
      const double* xg = x + (static_cast<std::size_t>(n) * p.in_c + grp * p.in_cg) * p.in_plane;
      const double* dyg = dy + (static_cast<std::size_t>(n) * p.out_c + grp * p.out_cg) * p.out_plane;
      const double* dcol = dyg;
      if (!is_pointwise(g)) {
        im2col(dyg, g, col.data());
        dcol = col.data();
      }
      if (dx) {
        double* dxg = dx + (static_cast<std::size_t>(n) * p.in_c + grp * p.in_cg) * p.in_plane;
        detail::gemm_acc(false, false, p.in_cg, g.cols(), g.rows(), w + grp * wg, dcol, dxg);
      }
      if (dw) detail::gemm_acc(false, true, p.in_cg, g.rows(), g.cols(), xg, dcol, dw + grp * wg);
    }
  }
}

double* grad_target(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.node()->grad_buffer().data();
}

}  // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& wt, const Conv2dOptions& opt) {
  if (opt.stride < 1) throw ConfigError("conv2d stride must be >= 1");
  if (opt.padding < 0 || opt.output_padding < 0) throw ConfigError("conv2d padding must be >= 0");
  if (opt.groups < 1 || x.c % opt.groups != 0) {
    throw ConfigError("conv2d groups " + std::to_string(opt.groups) + " do not divide " + std::to_string(x.c) +
                      " input channels");
  }
  if (wt.h != wt.w) throw DimensionError("conv2d expects a square kernel, got " + wt.str());
  const int k = wt.h;
  Shape out{x.n, 0, 0, 0};
  if (!opt.transposed) {
    if (wt.c * opt.groups != x.c) {
      throw DimensionError("conv2d weight " + wt.str() + " does not match input " + x.str() + " with groups " +
                           std::to_string(opt.groups));
    }
    if (wt.n % opt.groups != 0) throw ConfigError("conv2d groups do not divide output channels");
    out.c = wt.n;
    out.h = (x.h + 2 * opt.padding - k) / opt.stride + 1;
    out.w = (x.w + 2 * opt.padding - k) / opt.stride + 1;
    if (x.h + 2 * opt.padding < k || x.w + 2 * opt.padding < k) {
      throw DimensionError("conv2d kernel larger than padded input " + x.str());
    }
  } else {
    if (wt.n != x.c) {
      throw DimensionError("transposed conv2d weight " + wt.str() + " does not match input " + x.str());
    }
    if (opt.output_padding >= opt.stride) throw ConfigError("output_padding must be smaller than stride");
    out.c = wt.c * opt.groups;
    out.h = (x.h - 1) * opt.stride - 2 * opt.padding + k + opt.output_padding;
    out.w = (x.w - 1) * opt.stride - 2 * opt.padding + k + opt.output_padding;
  }
  if (out.h <= 0 || out.w <= 0) throw DimensionError("conv2d output would be empty for input " + x.str());
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  const Shape out_shape = conv2d_output_shape(input.shape(), weight.shape(), opt);
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(out_shape.c)) {
    throw DimensionError("conv2d bias needs " + std::to_string(out_shape.c) + " values, got " +
                         std::to_string(bias.numel()));
  }
  const ConvPlan plan = make_plan(input.shape(), weight.shape(), opt, out_shape);

  std::vector<double> out(out_shape.numel(), 0.0);
  if (!opt.transposed) {
    conv_forward(plan, input.data().data(), weight.data().data(), out.data());
  } else {
    deconv_forward(plan, input.data().data(), weight.data().data(), out.data());
  }
  if (bias.defined()) {
    const auto b = bias.data();
    for (int n = 0; n < out_shape.n; ++n) {
      for (int c = 0; c < out_shape.c; ++c) {
        double* dst = out.data() + (static_cast<std::size_t>(n) * out_shape.c + c) * plan.out_plane;
        for (std::size_t i = 0; i < plan.out_plane; ++i) dst[i] += b[c];
      }
    }
  }

  const bool transposed = opt.transposed;
  return detail::make_result(
      out_shape, std::move(out), transposed ? "conv_transpose2d" : "conv2d", {input, weight, bias},
      [input, weight, bias, plan, transposed](detail::Node& self) {
        const double* dy = self.grad.data();
        double* dx = grad_target(input);
        double* dw = grad_target(weight);
        if (dx || dw) {
          if (!transposed) {
            conv_backward(plan, input.data().data(), weight.data().data(), dy, dx, dw);
          } else {
            deconv_backward(plan, input.data().data(), weight.data().data(), dy, dx, dw);
          }
        }
        if (double* db = grad_target(bias)) {
          for (int n = 0; n < plan.n; ++n) {
            for (int c = 0; c < plan.out_c; ++c) {
              const double* src = dy + (static_cast<std::size_t>(n) * plan.out_c + c) * plan.out_plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plan.out_plane; ++i) acc += src[i];
              db[c] += acc;
            }
          }
        }
      });
}

Tensor unfold(const Tensor& x, int k) {
  if (k < 1 || k % 2 == 0) throw ConfigError("unfold expects an odd kernel size, got " + std::to_string(k));
  const Shape s = x.shape();
  const Shape out_shape{s.n, s.c * k * k, s.h, s.w};
  const Window g{s.c, s.h, s.w, k, 1, k / 2, s.h, s.w};
  std::vector<double> out(out_shape.numel());
  const std::size_t in_block = static_cast<std::size_t>(s.c) * s.plane();
  const std::size_t out_block = g.rows() * g.cols();
  for (int n = 0; n < s.n; ++n) im2col(x.data().data() + n * in_block, g, out.data() + n * out_block);
  return detail::make_result(out_shape, std::move(out), "unfold", {x},
                             [x, g, in_block, out_block](detail::Node& self) {
                               double* dx = grad_target(x);
                               if (!dx) return;
                               for (int n = 0; n < x.shape().n; ++n) {
                                 col2im_acc(self.grad.data() + n * out_block, g, dx + n * in_block);
                               }
                             });
}

}  // namespace cpa

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

#include "cpa/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "cpa/errors.hpp"
#include "gemm.hpp"

namespace cpa {

namespace {

double* grad_target(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.node()->grad_buffer().data();
}

std::array<int, 4> dims(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

std::array<std::size_t, 4> strides(const Shape& s) {
  return {static_cast<std::size_t>(s.c) * s.h * s.w, static_cast<std::size_t>(s.h) * s.w,
          static_cast<std::size_t>(s.w), 1};
}

// Stride table of `s` viewed at the extent of `out`; broadcast axes get 0.
std::array<std::size_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  auto st = strides(s);
  const auto d = dims(s);
  const auto o = dims(out);
  for (int i = 0; i < 4; ++i) {
    if (d[i] != o[i]) st[i] = 0;
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const auto da = dims(a);
  const auto db = dims(b);
  std::array<int, 4> out{};
  for (int i = 0; i < 4; ++i) {
    if (da[i] == db[i] || db[i] == 1) {
      out[i] = da[i];
    } else if (da[i] == 1) {
      out[i] = db[i];
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
    }
  }
  return Shape{out[0], out[1], out[2], out[3]};
}

enum class BinaryKind { add, sub, mul, div };

template <typename Fn>
void for_each_broadcast(const Shape& out, const std::array<std::size_t, 4>& sa, const std::array<std::size_t, 4>& sb,
                        Fn&& fn) {
  std::size_t o = 0;
  for (int n = 0; n < out.n; ++n) {
    for (int c = 0; c < out.c; ++c) {
      for (int h = 0; h < out.h; ++h) {
        const std::size_t ia = n * sa[0] + c * sa[1] + h * sa[2];
        const std::size_t ib = n * sb[0] + c * sb[1] + h * sb[2];
        for (int w = 0; w < out.w; ++w, ++o) fn(o, ia + w * sa[3], ib + w * sb[3]);
      }
    }
  }
}

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  static constexpr const char* kNames[] = {"add", "sub", "mul", "div"};
  const char* name = kNames[static_cast<int>(kind)];
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(out_shape.numel());
  for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
    switch (kind) {
      case BinaryKind::add: out[o] = av[i] + bv[j]; break;
      case BinaryKind::sub: out[o] = av[i] - bv[j]; break;
      case BinaryKind::mul: out[o] = av[i] * bv[j]; break;
      case BinaryKind::div: out[o] = av[i] / bv[j]; break;
    }
  });
  return detail::make_result(
      out_shape, std::move(out), name, {a, b}, [a, b, kind, out_shape, sa, sb](detail::Node& self) {
        double* da = grad_target(a);
        double* db = grad_target(b);
        const auto av = a.data();
        const auto bv = b.data();
        const double* g = self.grad.data();
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
          switch (kind) {
            case BinaryKind::add:
              if (da) da[i] += g[o];
              if (db) db[j] += g[o];
              break;
            case BinaryKind::sub:
              if (da) da[i] += g[o];
              if (db) db[j] -= g[o];
              break;
            case BinaryKind::mul:
              if (da) da[i] += g[o] * bv[j];
              if (db) db[j] += g[o] * av[i];
              break;
            case BinaryKind::div:
              if (da) da[i] += g[o] / bv[j];
              if (db) db[j] -= g[o] * av[i] / (bv[j] * bv[j]);
              break;
          }
        });
      });
}

// Unary op with a pointwise derivative f'(x, y).
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return detail::make_result(x.shape(), std::move(out), name, {x}, [x, df](detail::Node& self) {
    double* dx = grad_target(x);
    if (!dx) return;
    const auto xv = x.data();
    const auto& y = *self.value;
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += self.grad[i] * df(xv[i], y[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Outer/axis/inner decomposition of a contiguous NCHW buffer.
struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  const auto d = dims(s);
  if (axis < 0 || axis > 3) throw DimensionError("axis must be in [0, 3], got " + std::to_string(axis));
  AxisSplit r{1, static_cast<std::size_t>(d[axis]), 1};
  for (int i = 0; i < axis; ++i) r.outer *= d[i];
  for (int i = axis + 1; i < 4; ++i) r.inner *= d[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "hardswish") return Activation::hardswish;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Tensor activate(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return unary(
          x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
    case Activation::gelu:
      return unary(
          x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
          [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * v * v) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
            return cdf + v * pdf;
          });
    case Activation::hardswish:
      return unary(
          x, "hardswish", [](double v) { return v * std::clamp(v + 3.0, 0.0, 6.0) / 6.0; },
          [](double v, double) {
            if (v <= -3.0) return 0.0;
            if (v >= 3.0) return 1.0;
            return (2.0 * v + 3.0) / 6.0;
          });
    case Activation::sigmoid:
      return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
  }
  throw ConfigError("unknown activation");
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::div); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, "add_scalar", [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------

PoolKind parse_pool(std::string_view name) {
  if (name == "gap_spatial") return PoolKind::gap_spatial;
  if (name == "gap_channel") return PoolKind::gap_channel;
  if (name == "gmp_channel") return PoolKind::gmp_channel;
  throw ConfigError("unknown pool kind '" + std::string(name) + "'");
}

Tensor pool(const Tensor& x, PoolKind kind) {
  const Shape s = x.shape();
  const auto xv = x.data();
  const std::size_t plane = s.plane();
  if (kind == PoolKind::gap_spatial) {
    Shape out_shape{s.n, s.c, 1, 1};
    std::vector<double> out(out_shape.numel());
    for (std::size_t nc = 0; nc < out.size(); ++nc) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += xv[nc * plane + i];
      out[nc] = acc / static_cast<double>(plane);
    }
    return detail::make_result(out_shape, std::move(out), "gap_spatial", {x}, [x, plane](detail::Node& self) {
      double* dx = grad_target(x);
      if (!dx) return;
      for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
        const double g = self.grad[nc] / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] += g;
      }
    });
  }

  const bool is_max = kind == PoolKind::gmp_channel;
  Shape out_shape{s.n, 1, s.h, s.w};
  std::vector<double> out(out_shape.numel());
  // Argmax channel per position, first occurrence on ties.
  std::vector<int> arg(is_max ? out.size() : 0);
  for (int n = 0; n < s.n; ++n) {
    const double* base = xv.data() + static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double acc = is_max ? base[p] : 0.0;
      int best = 0;
      for (int c = 0; c < s.c; ++c) {
        const double v = base[c * plane + p];
        if (is_max) {
          if (v > acc) {
            acc = v;
            best = c;
          }
        } else {
          acc += v;
        }
      }
      const std::size_t o = n * plane + p;
      if (is_max) {
        out[o] = acc;
        arg[o] = best;
      } else {
        out[o] = acc / s.c;
      }
    }
  }
  return detail::make_result(out_shape, std::move(out), is_max ? "gmp_channel" : "gap_channel", {x},
                             [x, is_max, arg = std::move(arg)](detail::Node& self) {
                               double* dx = grad_target(x);
                               if (!dx) return;
                               const Shape s = x.shape();
                               const std::size_t plane = s.plane();
                               for (int n = 0; n < s.n; ++n) {
                                 double* base = dx + static_cast<std::size_t>(n) * s.c * plane;
                                 for (std::size_t p = 0; p < plane; ++p) {
                                   const std::size_t o = n * plane + p;
                                   if (is_max) {
                                     base[arg[o] * plane + p] += self.grad[o];
                                   } else {
                                     const double g = self.grad[o] / s.c;
                                     for (int c = 0; c < s.c; ++c) base[c * plane + p] += g;
                                   }
                                 }
                               }
                             });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return detail::make_result(Shape{}, {acc}, "sum", {x}, [x](detail::Node& self) {
    double* dx = grad_target(x);
    if (!dx) return;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape s = x.shape();
  if (gamma.defined() && gamma.numel() != static_cast<std::size_t>(s.c)) {
    throw DimensionError("layer_norm gamma needs " + std::to_string(s.c) + " values");
  }
  if (beta.defined() && beta.numel() != static_cast<std::size_t>(s.c)) {
    throw DimensionError("layer_norm beta needs " + std::to_string(s.c) + " values");
  }
  const std::size_t plane = s.plane();
  const auto xv = x.data();
  std::vector<double> xhat(s.numel());
  std::vector<double> inv_std(static_cast<std::size_t>(s.n) * plane);
  std::vector<double> out(s.numel());
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double mu = 0.0;
      for (int c = 0; c < s.c; ++c) mu += xv[base + c * plane + p];
      mu /= s.c;
      double var = 0.0;
      for (int c = 0; c < s.c; ++c) {
        const double d = xv[base + c * plane + p] - mu;
        var += d * d;
      }
      var /= s.c;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[n * plane + p] = is;
      for (int c = 0; c < s.c; ++c) {
        const std::size_t i = base + c * plane + p;
        xhat[i] = (xv[i] - mu) * is;
        const double g = gamma.defined() ? gamma.data()[c] : 1.0;
        const double b = beta.defined() ? beta.data()[c] : 0.0;
        out[i] = g * xhat[i] + b;
      }
    }
  }
  return detail::make_result(
      s, std::move(out), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const Shape s = x.shape();
        const std::size_t plane = s.plane();
        double* dx = grad_target(x);
        double* dg = grad_target(gamma);
        double* db = grad_target(beta);
        const double* g = self.grad.data();
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            double sum_d = 0.0;
            double sum_dx = 0.0;
            for (int c = 0; c < s.c; ++c) {
              const std::size_t i = base + c * plane + p;
              const double gc = gamma.defined() ? gamma.data()[c] : 1.0;
              const double d = g[i] * gc;
              sum_d += d;
              sum_dx += d * xhat[i];
              if (dg) dg[c] += g[i] * xhat[i];
              if (db) db[c] += g[i];
            }
            if (!dx) continue;
            const double is = inv_std[n * plane + p];
            for (int c = 0; c < s.c; ++c) {
              const std::size_t i = base + c * plane + p;
              const double gc = gamma.defined() ? gamma.data()[c] : 1.0;
              dx[i] += is / s.c * (s.c * g[i] * gc - sum_d - xhat[i] * sum_dx);
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = xv[base];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, xv[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(xv[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  return detail::make_result(x.shape(), std::move(out), "softmax", {x}, [x, sp](detail::Node& self) {
    double* dx = grad_target(x);
    if (!dx) return;
    const auto& y = *self.value;
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * y[base + l * sp.inner];
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t i = base + l * sp.inner;
          dx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  std::vector<double> norms(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double ss = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) ss += xv[base + l * sp.inner] * xv[base + l * sp.inner];
      const double nrm = std::max(std::sqrt(ss), eps);
      norms[o * sp.inner + in] = nrm;
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] = xv[base + l * sp.inner] / nrm;
    }
  }
  return detail::make_result(x.shape(), std::move(out), "l2_normalize", {x},
                             [x, sp, eps, norms = std::move(norms)](detail::Node& self) {
                               double* dx = grad_target(x);
                               if (!dx) return;
                               const auto& y = *self.value;
                               const double* g = self.grad.data();
                               for (std::size_t o = 0; o < sp.outer; ++o) {
                                 for (std::size_t in = 0; in < sp.inner; ++in) {
                                   const std::size_t base = o * sp.len * sp.inner + in;
                                   const double nrm = norms[o * sp.inner + in];
                                   // Below eps the op is a plain scaling by 1/eps.
                                   const bool clipped = nrm <= eps;
                                   double dot = 0.0;
                                   if (!clipped) {
                                     for (std::size_t l = 0; l < sp.len; ++l) {
                                       dot += g[base + l * sp.inner] * y[base + l * sp.inner];
                                     }
                                   }
                                   for (std::size_t l = 0; l < sp.len; ++l) {
                                     const std::size_t i = base + l * sp.inner;
                                     dx[i] += (g[i] - y[i] * dot) / nrm;
                                   }
                                 }
                               }
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.c != sb.c) {
    throw DimensionError("matmul batch mismatch: " + sa.str() + " vs " + sb.str());
  }
  const int m = transpose_a ? sa.w : sa.h;
  const int ka = transpose_a ? sa.h : sa.w;
  const int kb = transpose_b ? sb.w : sb.h;
  const int p = transpose_b ? sb.h : sb.w;
  if (ka != kb) throw DimensionError("matmul inner mismatch: " + sa.str() + " vs " + sb.str());
  const Shape out_shape{sa.n, sa.c, m, p};
  const std::size_t batches = static_cast<std::size_t>(sa.n) * sa.c;
  const std::size_t a_block = sa.plane();
  const std::size_t b_block = sb.plane();
  const std::size_t c_block = out_shape.plane();
  std::vector<double> out(out_shape.numel(), 0.0);
  for (std::size_t i = 0; i < batches; ++i) {
    detail::gemm_acc(transpose_a, transpose_b, m, p, ka, a.data().data() + i * a_block,
                     b.data().data() + i * b_block, out.data() + i * c_block);
  }
  return detail::make_result(
      out_shape, std::move(out), "matmul", {a, b},
      [a, b, transpose_a, transpose_b, m, p, ka, batches, a_block, b_block, c_block](detail::Node& self) {
        double* da = grad_target(a);
        double* db = grad_target(b);
        for (std::size_t i = 0; i < batches; ++i) {
          const double* g = self.grad.data() + i * c_block;
          const double* av = a.data().data() + i * a_block;
          const double* bv = b.data().data() + i * b_block;
          if (da) {
            // dA = G * op(B)^T, laid out as op(A) or its transpose.
            if (!transpose_a) {
              detail::gemm_acc(false, !transpose_b, m, ka, p, g, bv, da + i * a_block);
            } else {
              detail::gemm_acc(transpose_b, true, ka, m, p, bv, g, da + i * a_block);
            }
          }
          if (db) {
            // dB = op(A)^T * G, laid out as op(B) or its transpose.
            if (!transpose_b) {
              detail::gemm_acc(!transpose_a, false, ka, p, m, av, g, db + i * b_block);
            } else {
              detail::gemm_acc(true, transpose_a, p, ka, m, g, av, db + i * b_block);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

Tensor bilinear_rescale(const Tensor& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw DimensionError("bilinear_rescale target must be >= 1x1");
  const Shape s = x.shape();
  struct Tap {
    int i0, i1;
    double l0, l1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * ratio - 0.5;
      if (src < 0) src = 0;
      int i0 = static_cast<int>(src);
      if (i0 > in - 1) i0 = in - 1;
      const int i1 = i0 < in - 1 ? i0 + 1 : i0;
      const double l1 = src - i0;
      t[o] = {i0, i1, 1.0 - l1, l1};
    }
    return t;
  };
  const auto ty = taps(s.h, out_h);
  const auto tx = taps(s.w, out_w);
  const Shape out_shape{s.n, s.c, out_h, out_w};
  const auto xv = x.data();
  std::vector<double> out(out_shape.numel());
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = xv.data() + pl * s.plane();
    double* dst = out.data() + pl * out_shape.plane();
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        dst[oy * out_w + ox] = a.l0 * (b.l0 * src[a.i0 * s.w + b.i0] + b.l1 * src[a.i0 * s.w + b.i1]) +
                               a.l1 * (b.l0 * src[a.i1 * s.w + b.i0] + b.l1 * src[a.i1 * s.w + b.i1]);
      }
    }
  }
  return detail::make_result(out_shape, std::move(out), "bilinear_rescale", {x},
                             [x, ty, tx, out_shape, planes](detail::Node& self) {
                               double* dx = grad_target(x);
                               if (!dx) return;
                               const Shape s = x.shape();
                               for (std::size_t pl = 0; pl < planes; ++pl) {
                                 double* d = dx + pl * s.plane();
                                 const double* g = self.grad.data() + pl * out_shape.plane();
                                 for (int oy = 0; oy < out_shape.h; ++oy) {
                                   const Tap& a = ty[oy];
                                   for (int ox = 0; ox < out_shape.w; ++ox) {
                                     const Tap& b = tx[ox];
                                     const double gv = g[oy * out_shape.w + ox];
                                     d[a.i0 * s.w + b.i0] += gv * a.l0 * b.l0;
                                     d[a.i0 * s.w + b.i1] += gv * a.l0 * b.l1;
                                     d[a.i1 * s.w + b.i0] += gv * a.l1 * b.l0;
                                     d[a.i1 * s.w + b.i1] += gv * a.l1 * b.l1;
                                   }
                                 }
                               }
                             });
}

namespace {

// Gathers whole channel planes: output channel c <- input channel src[c].
Tensor gather_channels(const Tensor& x, std::vector<int> src, int out_c, const char* name) {
  const Shape s = x.shape();
  const Shape out_shape{s.n, out_c, s.h, s.w};
  const std::size_t plane = s.plane();
  const auto xv = x.data();
  std::vector<double> out(out_shape.numel());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < out_c; ++c) {
      const double* from = xv.data() + (static_cast<std::size_t>(n) * s.c + src[c]) * plane;
      std::copy(from, from + plane, out.data() + (static_cast<std::size_t>(n) * out_c + c) * plane);
    }
  }
  return detail::make_result(out_shape, std::move(out), name, {x},
                             [x, src = std::move(src), out_c, plane](detail::Node& self) {
                               double* dx = grad_target(x);
                               if (!dx) return;
                               const Shape s = x.shape();
                               for (int n = 0; n < s.n; ++n) {
                                 for (int c = 0; c < out_c; ++c) {
                                   const double* g =
                                       self.grad.data() + (static_cast<std::size_t>(n) * out_c + c) * plane;
                                   double* d = dx + (static_cast<std::size_t>(n) * s.c + src[c]) * plane;
                                   for (std::size_t i = 0; i < plane; ++i) d[i] += g[i];
                                 }
                               }
                             });
}

}  // namespace

Tensor channel_shuffle(const Tensor& x, int groups) {
  const int c = x.shape().c;
  if (groups < 1 || c % groups != 0) {
    throw ConfigError("channel_shuffle: " + std::to_string(groups) + " groups do not divide " +
                      std::to_string(c) + " channels");
  }
  const int per = c / groups;
  std::vector<int> src(c);
  for (int i = 0; i < c; ++i) src[i] = (i % groups) * per + i / groups;
  return gather_channels(x, std::move(src), c, "channel_shuffle");
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
  if (begin < 0 || end > x.shape().c || begin >= end) {
    throw DimensionError("slice_channels [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + x.shape().str());
  }
  std::vector<int> src(end - begin);
  for (int i = begin; i < end; ++i) src[i - begin] = i;
  return gather_channels(x, std::move(src), end - begin, "slice_channels");
}

std::vector<Tensor> split_channels(const Tensor& x, int parts) {
  const int c = x.shape().c;
  if (parts < 1 || c % parts != 0) {
    throw ConfigError("split_channels: " + std::to_string(parts) + " parts do not divide " + std::to_string(c) +
                      " channels");
  }
  const int per = c / parts;
  std::vector<Tensor> out;
  out.reserve(parts);
  for (int j = 0; j < parts; ++j) out.push_back(slice_channels(x, j * per, (j + 1) * per));
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_channels of nothing");
  const Shape first = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels mismatch: " + first.str() + " vs " + s.str());
    }
    total += s.c;
  }
  const Shape out_shape{first.n, total, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<double> out(out_shape.numel());
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int pc = p.shape().c;
    for (int n = 0; n < first.n; ++n) {
      const double* from = p.data().data() + static_cast<std::size_t>(n) * pc * plane;
      std::copy(from, from + pc * plane, out.data() + (static_cast<std::size_t>(n) * total + off) * plane);
    }
    off += pc;
  }
  std::vector<Tensor> keep(parts.begin(), parts.end());
  return detail::make_result(out_shape, std::move(out), "concat_channels", keep,
                             [keep, offsets, total, plane](detail::Node& self) {
                               for (std::size_t k = 0; k < keep.size(); ++k) {
                                 double* dx = grad_target(keep[k]);
                                 if (!dx) continue;
                                 const Shape s = keep[k].shape();
                                 for (int n = 0; n < s.n; ++n) {
                                   const double* g = self.grad.data() +
                                                     (static_cast<std::size_t>(n) * total + offsets[k]) * plane;
                                   double* d = dx + static_cast<std::size_t>(n) * s.c * plane;
                                   for (std::size_t i = 0; i < s.c * plane; ++i) d[i] += g[i];
                                 }
                               }
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw DimensionError("reshape " + x.shape().str() + " -> " + shape.str() + " changes element count");
  }
  // Shares the storage; only the shape differs.
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = x.node()->value;
  node->op = "reshape";
  if (grad_enabled() && x.requires_grad()) {
    node->requires_grad = true;
    node->parents.push_back(x.node());
    node->backward = [x](detail::Node& self) {
      double* dx = grad_target(x);
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    };
  }
  return Tensor(std::move(node));
}

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right) {
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw DimensionError("pad2d: negative padding");
  const Shape s = x.shape();
  const Shape out_shape{s.n, s.c, s.h + top + bottom, s.w + left + right};
  std::vector<double> out(out_shape.numel(), 0.0);
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  const auto xv = x.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (int y = 0; y < s.h; ++y) {
      const double* src = xv.data() + pl * s.plane() + static_cast<std::size_t>(y) * s.w;
      std::copy(src, src + s.w,
                out.data() + pl * out_shape.plane() + static_cast<std::size_t>(y + top) * out_shape.w + left);
    }
  }
  return detail::make_result(out_shape, std::move(out), "pad2d", {x},
                             [x, top, left, out_shape, planes](detail::Node& self) {
                               double* dx = grad_target(x);
                               if (!dx) return;
                               const Shape s = x.shape();
                               for (std::size_t pl = 0; pl < planes; ++pl) {
                                 for (int y = 0; y < s.h; ++y) {
                                   const double* g = self.grad.data() + pl * out_shape.plane() +
                                                     static_cast<std::size_t>(y + top) * out_shape.w + left;
                                   double* d = dx + pl * s.plane() + static_cast<std::size_t>(y) * s.w;
                                   for (int xx = 0; xx < s.w; ++xx) d[xx] += g[xx];
                                 }
                               }
                             });
}

Tensor crop2d(const Tensor& x, int top, int left, int height, int width) {
  const Shape s = x.shape();
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.h || left + width > s.w) {
    throw DimensionError("crop2d window out of range for " + s.str());
  }
  const Shape out_shape{s.n, s.c, height, width};
  std::vector<double> out(out_shape.numel());
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  const auto xv = x.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (int y = 0; y < height; ++y) {
      const double* src = xv.data() + pl * s.plane() + static_cast<std::size_t>(y + top) * s.w + left;
      std::copy(src, src + width, out.data() + pl * out_shape.plane() + static_cast<std::size_t>(y) * width);
    }
  }
  return detail::make_result(out_shape, std::move(out), "crop2d", {x},
                             [x, top, left, out_shape, planes](detail::Node& self) {
                               double* dx = grad_target(x);
                               if (!dx) return;
                               const Shape s = x.shape();
                               for (std::size_t pl = 0; pl < planes; ++pl) {
                                 for (int y = 0; y < out_shape.h; ++y) {
                                   const double* g = self.grad.data() + pl * out_shape.plane() +
                                                     static_cast<std::size_t>(y) * out_shape.w;
                                   double* d = dx + pl * s.plane() + static_cast<std::size_t>(y + top) * s.w + left;
                                   for (int xx = 0; xx < out_shape.w; ++xx) d[xx] += g[xx];
                                 }
                               }
                             });
}

}  // namespace cpa

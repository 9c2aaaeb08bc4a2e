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
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cpa/errors.hpp"
#include "cpa/gradcheck.hpp"
#include "cpa/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace cpa {
namespace {

using testing::probe_loss;
using testing::random_tensor;

// Runs grad_check on f(params["x"]) (and optional second input "y").
GradCheckReport check_unary(const std::string& name, Tensor x, const std::function<Tensor(const Tensor&)>& f) {
  ParamStore ps;
  ps.add("x", x);
  return grad_check(name, [&](const ParamStore& p) { return probe_loss(f(p.at("x"))); }, ps, 1e-4);
}

GradCheckReport check_binary(const std::string& name, Tensor x, Tensor y,
                             const std::function<Tensor(const Tensor&, const Tensor&)>& f) {
  ParamStore ps;
  ps.add("x", x);
  ps.add("y", y);
  return grad_check(
      name, [&](const ParamStore& p) { return probe_loss(f(p.at("x"), p.at("y"))); }, ps, 1e-4);
}

TEST(ActivationTest, Examples) {
  const Tensor x = Tensor::from({1, 1, 1, 3}, {0.0, 3.0, -4.0});
  const Tensor hs = hardswish(x);
  EXPECT_EQ(hs.data()[0], 0.0);
  EXPECT_DOUBLE_EQ(hs.data()[1], 3.0);
  EXPECT_EQ(hs.data()[2], 0.0);
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(relu(Tensor::scalar(-2.0)).item(), 0.0);
  EXPECT_NEAR(gelu(Tensor::scalar(1.0)).item(), oracle::gelu(1.0), 1e-15);
  EXPECT_THROW(parse_activation("swish"), ConfigError);
  EXPECT_EQ(parse_activation("gelu"), Activation::gelu);
}

TEST(ActivationTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (auto kind : {Activation::relu, Activation::gelu, Activation::hardswish, Activation::sigmoid}) {
    // Stay off the kinks at 0 (relu) and +-3 (hardswish).
    Tensor x = random_tensor({1, 4, 6, 6}, rng, 0.05, 2.9);
    for (std::size_t i = 0; i < x.numel(); i += 2) x.mutable_data()[i] *= -1.0;
    const auto r = check_unary("activation", x, [kind](const Tensor& t) { return activate(t, kind); });
    EXPECT_TRUE(r.pass) << static_cast<int>(kind) << " err " << r.max_rel_error;
  }
}

TEST(PoolTest, Examples) {
  const Tensor c = Tensor::full({1, 3, 2, 2}, 0.7);
  for (auto kind : {PoolKind::gap_spatial, PoolKind::gap_channel, PoolKind::gmp_channel}) {
    for (double v : pool(c, kind).data()) EXPECT_DOUBLE_EQ(v, 0.7);
  }
  const Tensor ch = Tensor::from({1, 2, 1, 1}, {1.0, 3.0});
  EXPECT_EQ(pool(ch, PoolKind::gap_channel).item(), 2.0);
  EXPECT_EQ(pool(ch, PoolKind::gmp_channel).item(), 3.0);
  const Tensor sp = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(pool(sp, PoolKind::gap_spatial).item(), 2.5);
  EXPECT_EQ(pool(sp, PoolKind::gap_spatial).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_THROW(parse_pool("gmp_spatial"), ConfigError);
}

TEST(PoolTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (auto kind : {PoolKind::gap_spatial, PoolKind::gap_channel, PoolKind::gmp_channel}) {
    const auto r = check_unary("pool", random_tensor({1, 4, 6, 6}, rng),
                               [kind](const Tensor& t) { return pool(t, kind); });
    EXPECT_TRUE(r.pass) << r.max_rel_error;
  }
}

TEST(LayerNormTest, Examples) {
  const Tensor g = Tensor::full({1, 2, 1, 1}, 1.0);
  const Tensor b = Tensor::zeros({1, 2, 1, 1});
  for (double v : layer_norm(Tensor::full({1, 2, 3, 3}, 4.2), g, b).data()) EXPECT_EQ(v, 0.0);
  const Tensor y = layer_norm(Tensor::from({1, 2, 1, 1}, {1.0, 3.0}), g, b);
  // var = 1, so the epsilon guard moves the result by ~5e-7.
  EXPECT_NEAR(y.data()[0], -1.0, 1e-6);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-6);
}

TEST(LayerNormTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  ParamStore ps;
  ps.add("x", random_tensor({1, 4, 6, 6}, rng));
  ps.add("g", random_tensor({1, 4, 1, 1}, rng, 0.5, 1.5));
  ps.add("b", random_tensor({1, 4, 1, 1}, rng));
  const auto r = grad_check(
      "layer_norm",
      [](const ParamStore& p) { return probe_loss(layer_norm(p.at("x"), p.at("g"), p.at("b"))); }, ps, 1e-4);
  EXPECT_TRUE(r.pass) << r.max_rel_error;
}

TEST(BilinearTest, ConstantAndIdentity) {
  const Tensor c = Tensor::full({1, 2, 3, 5}, 0.25);
  for (double v : bilinear_rescale(c, 7, 4).data()) EXPECT_NEAR(v, 0.25, 1e-15);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({1, 2, 5, 6}, rng);
  const Tensor y = bilinear_rescale(x, 5, 6);
  EXPECT_EQ(testing::max_abs_diff(x.data(), y.data()), 0.0);
}

TEST(BilinearTest, TwoByTwoToFourByFour) {
  // Scalar oracle: align-corners-false source coordinate per output index.
  auto src = [](int o, int in, int out) { return std::max((o + 0.5) * in / out - 0.5, 0.0); };
  auto sample = [](const double img[2][2], double y, double x) {
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
    const double ly = y - y0, lx = x - x0;
    return (1 - ly) * ((1 - lx) * img[y0][x0] + lx * img[y0][x1]) + ly * ((1 - lx) * img[y1][x0] + lx * img[y1][x1]);
  };
  const double img[2][2] = {{0, 1}, {2, 3}};
  const Tensor y = bilinear_rescale(Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3}), 4, 4);
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox)
      EXPECT_NEAR(y.at(0, 0, oy, ox), sample(img, std::min(src(oy, 2, 4), 1.0), std::min(src(ox, 2, 4), 1.0)), 1e-15);
  // Frozen corner values from the same oracle.
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 0.75);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 3, 3), 3.0);
}

TEST(BilinearTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (auto [oh, ow] : {std::pair{12, 9}, std::pair{3, 4}}) {
    const auto r = check_unary("bilinear_rescale", random_tensor({1, 4, 6, 6}, rng),
                               [oh = oh, ow = ow](const Tensor& t) { return bilinear_rescale(t, oh, ow); });
    EXPECT_TRUE(r.pass) << r.max_rel_error;
  }
}

Tensor channel_index_tensor(int c) {
  std::vector<double> v(c);
  std::iota(v.begin(), v.end(), 0.0);
  return Tensor::from({1, c, 1, 1}, v);
}

TEST(ChannelShuffleTest, Examples) {
  const Tensor x = channel_index_tensor(4);
  EXPECT_EQ(testing::max_abs_diff(channel_shuffle(x, 1).data(), x.data()), 0.0);
  const Tensor y = channel_shuffle(x, 2);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 2, 1, 3}));
  EXPECT_THROW(channel_shuffle(x, 3), ConfigError);
}

TEST(ChannelShuffleTest, InverseRoundTripIsExactBijection) {
  std::mt19937_64 rng(6);
  for (int c : {2, 4, 6, 8, 12}) {
    for (int g = 1; g <= c; ++g) {
      if (c % g) continue;
      const Tensor idx = channel_index_tensor(c);
      const Tensor s = channel_shuffle(idx, g);
      std::vector<double> sorted(s.data().begin(), s.data().end());
      std::sort(sorted.begin(), sorted.end());
      EXPECT_EQ(sorted, std::vector<double>(idx.data().begin(), idx.data().end()));
      const Tensor x = random_tensor({2, c, 3, 3}, rng);
      const Tensor back = channel_shuffle(channel_shuffle(x, g), c / g);
      EXPECT_EQ(testing::max_abs_diff(back.data(), x.data()), 0.0) << c << "/" << g;
    }
  }
}

TEST(ChannelShuffleTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const auto r = check_unary("channel_shuffle", random_tensor({1, 4, 6, 6}, rng),
                             [](const Tensor& t) { return channel_shuffle(t, 2); });
  EXPECT_TRUE(r.pass);
}

TEST(SoftmaxTest, Examples) {
  for (double v : softmax(Tensor::full({1, 1, 1, 5}, 3.0), 3).data()) EXPECT_DOUBLE_EQ(v, 0.2);
  const Tensor y = softmax(Tensor::from({1, 1, 1, 2}, {0.0, std::log(3.0)}), 3);
  EXPECT_NEAR(y.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.75, 1e-15);
}

TEST(SoftmaxTest, RowsAreNonnegativeAndSumToOne) {
  std::mt19937_64 rng(8);
  for (int axis = 0; axis < 4; ++axis) {
    const Tensor x = random_tensor({3, 4, 5, 6}, rng, -20.0, 20.0);
    const Tensor y = softmax(x, axis);
    const Shape s = y.shape();
    const int len = s.dim(axis);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            int idx[4] = {n, c, h, w};
            if (idx[axis] != 0) continue;
            double total = 0.0;
            for (int l = 0; l < len; ++l) {
              idx[axis] = l;
              const double v = y.at(idx[0], idx[1], idx[2], idx[3]);
              EXPECT_GE(v, 0.0);
              total += v;
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
          }
  }
}

TEST(SoftmaxTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int axis : {1, 3}) {
    const auto r = check_unary("softmax", random_tensor({1, 4, 6, 6}, rng, -2.0, 2.0),
                               [axis](const Tensor& t) { return softmax(t, axis); });
    EXPECT_TRUE(r.pass) << r.max_rel_error;
  }
}

TEST(L2NormalizeTest, UnitRowsAndGradient) {
  std::mt19937_64 rng(10);
  const Tensor y = l2_normalize(random_tensor({1, 2, 3, 8}, rng), 3);
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 3; ++h) {
      double ss = 0.0;
      for (int w = 0; w < 8; ++w) ss += y.at(0, c, h, w) * y.at(0, c, h, w);
      EXPECT_NEAR(ss, 1.0, 1e-12);
    }
  const auto r = check_unary("l2_normalize", random_tensor({1, 4, 6, 6}, rng),
                             [](const Tensor& t) { return l2_normalize(t, 3); });
  EXPECT_TRUE(r.pass) << r.max_rel_error;
}

TEST(MatmulTest, MatchesNaiveProductAllTransposes) {
  std::mt19937_64 rng(11);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const int m = 3, k = 5, p = 4;
      const Tensor a = random_tensor(ta ? Shape{2, 1, k, m} : Shape{2, 1, m, k}, rng);
      const Tensor b = random_tensor(tb ? Shape{2, 1, p, k} : Shape{2, 1, k, p}, rng);
      const Tensor c = matmul(a, b, ta, tb);
      ASSERT_EQ(c.shape(), (Shape{2, 1, m, p}));
      for (int n = 0; n < 2; ++n)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int q = 0; q < k; ++q)
              acc += (ta ? a.at(n, 0, q, i) : a.at(n, 0, i, q)) * (tb ? b.at(n, 0, j, q) : b.at(n, 0, q, j));
            EXPECT_NEAR(c.at(n, 0, i, j), acc, 1e-13);
          }
      const auto r = check_binary("matmul", a, b, [ta, tb](const Tensor& x, const Tensor& y) {
        return matmul(x, y, ta, tb);
      });
      EXPECT_TRUE(r.pass) << ta << tb << " " << r.max_rel_error;
    }
}

TEST(ElementwiseTest, BroadcastingAndGradients) {
  std::mt19937_64 rng(12);
  const Tensor a = random_tensor({1, 4, 6, 6}, rng);
  const Tensor b = random_tensor({1, 4, 1, 1}, rng, 0.5, 1.5);
  const Tensor s = add(a, b);
  EXPECT_DOUBLE_EQ(s.at(0, 2, 3, 4), a.at(0, 2, 3, 4) + b.at(0, 2, 0, 0));
  EXPECT_THROW(add(a, random_tensor({1, 3, 1, 1}, rng)), DimensionError);
  for (auto f : std::vector<std::function<Tensor(const Tensor&, const Tensor&)>>{
           [](const Tensor& x, const Tensor& y) { return add(x, y); },
           [](const Tensor& x, const Tensor& y) { return sub(x, y); },
           [](const Tensor& x, const Tensor& y) { return mul(x, y); },
           [](const Tensor& x, const Tensor& y) { return div(x, y); }}) {
    EXPECT_TRUE(check_binary("binary", a, b, f).pass);
    EXPECT_TRUE(check_binary("binary", a, random_tensor({1, 4, 6, 6}, rng, 0.5, 1.5), f).pass);
  }
}

TEST(ElementwiseTest, AbsClampScaleGradients) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({1, 4, 6, 6}, rng, 0.05, 0.9);
  for (std::size_t i = 0; i < x.numel(); i += 3) x.mutable_data()[i] *= -1.0;
  EXPECT_TRUE(check_unary("abs", x, [](const Tensor& t) { return abs(t); }).pass);
  // Keep elements away from the clamp bounds.
  EXPECT_TRUE(check_unary("clamp", x, [](const Tensor& t) { return clamp(t, -0.5, 0.5); }).pass);
  EXPECT_TRUE(check_unary("scale", x, [](const Tensor& t) { return add_scalar(scale(t, -2.5), 1.0); }).pass);
  EXPECT_TRUE(check_unary("mean", x, [](const Tensor& t) { return mean(mul(t, t)); }).pass);
}

TEST(LayoutTest, SplitConcatRoundTripIsExact) {
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({2, 8, 3, 5}, rng);
  for (int parts : {1, 2, 4, 8}) {
    const auto pieces = split_channels(x, parts);
    ASSERT_EQ(pieces.size(), static_cast<std::size_t>(parts));
    const Tensor back = concat_channels(std::span<const Tensor>(pieces));
    EXPECT_EQ(testing::max_abs_diff(back.data(), x.data()), 0.0);
  }
  const auto halves = split_channels(channel_index_tensor(4), 2);
  EXPECT_EQ(halves[0].data()[1], 1.0);
  EXPECT_EQ(halves[1].data()[0], 2.0);
  EXPECT_THROW(split_channels(x, 3), ConfigError);
}

TEST(LayoutTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor({1, 4, 6, 6}, rng);
  EXPECT_TRUE(check_unary("split_concat", x, [](const Tensor& t) {
                auto parts = split_channels(t, 2);
                return concat_channels({mul(parts[1], parts[1]), parts[0]});
              }).pass);
  EXPECT_TRUE(check_unary("reshape", x, [](const Tensor& t) { return softmax(reshape(t, {1, 2, 2, 36}), 3); }).pass);
  EXPECT_TRUE(check_unary("pad_crop", x, [](const Tensor& t) {
                return crop2d(mul(pad2d(t, 1, 2, 0, 3), pad2d(t, 1, 2, 0, 3)), 1, 1, 5, 6);
              }).pass);
}

}  // namespace
}  // namespace cpa

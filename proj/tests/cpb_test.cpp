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

#include "cpa/cpb.hpp"
#include "cpa/errors.hpp"
#include "cpa/gradcheck.hpp"
#include "cpa/ops.hpp"
#include "cpb_oracle.hpp"
#include "test_util.hpp"

namespace cpa {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;
using testing::values;

struct Block {
  CpbConfig cfg;
  ParamStore params;
  oracle::Fetch fetch;
};

Block make_block(CpbConfig cfg, std::uint64_t seed) {
  Block b;
  b.cfg = cfg;
  std::mt19937_64 rng(seed);
  init_cpb(b.params, "blk", cfg, rng);
  testing::randomize(b.params, seed + 1);
  const ParamStore* p = &b.params;
  b.fetch = [p](const std::string& n) { return values(p->at(n)); };
  return b;
}

oracle::Dims dims(const Tensor& t) { return {t.shape().n, t.shape().c, t.shape().h, t.shape().w}; }

void zero(ParamStore& p, const std::string& name) {
  for (double& v : p.at(name).mutable_data()) v = 0.0;
}

TEST(Cpb, ConfigValidation) {
  EXPECT_THROW(validate(CpbConfig{.channels = 8, .splits = 3}), ConfigError);
  EXPECT_THROW(validate(CpbConfig{.channels = 8, .splits = 2, .reduction = 3}), ConfigError);
  EXPECT_THROW(validate(CpbConfig{.channels = 8, .splits = 2, .reduction = 2, .heads = 3}), ConfigError);
  EXPECT_NO_THROW(validate(CpbConfig{.channels = 16, .splits = 4, .reduction = 16, .heads = 2}));
  EXPECT_EQ(parse_sigma_mode("sigmoid"), SigmaMode::sigmoid);
  EXPECT_THROW(parse_sigma_mode("tanh"), ConfigError);
}

TEST(ChannelAttention, MatchesOracleOnTinyInput) {
  Block b = make_block({.channels = 2, .splits = 1, .reduction = 2}, 1);
  std::mt19937_64 rng(2);
  const Tensor f = random_tensor({1, 2, 2, 2}, rng);
  const Tensor wc = channel_attention(f, b.params, "blk");
  EXPECT_EQ(wc.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_LT(max_abs_diff(wc.data(), oracle::channel_attention(values(f), dims(f), b.fetch, "blk")), 1e-12);
}

TEST(ChannelAttention, ZeroWeightsAndShape) {
  Block b = make_block({.channels = 8, .splits = 2, .reduction = 4}, 3);
  zero(b.params, "blk.ca.l2.w");
  zero(b.params, "blk.ca.l2.b");
  std::mt19937_64 rng(4);
  const Tensor wc = channel_attention(random_tensor({2, 8, 5, 7}, rng), b.params, "blk");
  EXPECT_EQ(wc.shape(), (Shape{2, 8, 1, 1}));
  for (double v : wc.data()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialAttention, ConstantInputMatchesConvOracle) {
  Block b = make_block({.channels = 2, .splits = 1, .reduction = 2}, 5);
  const Tensor f = Tensor::full({1, 2, 2, 2}, 0.7);
  const Tensor ws = spatial_attention(f, b.params, "blk");
  EXPECT_EQ(ws.shape(), (Shape{1, 2, 2, 2}));
  const oracle::Vec stats(8, 0.7);
  const oracle::Vec bias = b.fetch("blk.sa.b");
  const oracle::Vec ref = oracle::conv2d(stats, {1, 2, 2, 2}, b.fetch("blk.sa.w"), 2, 7, &bias, 1, 3, 1);
  EXPECT_LT(max_abs_diff(ws.data(), ref), 1e-12);
  EXPECT_LT(max_abs_diff(ws.data(), oracle::spatial_attention(values(f), dims(f), b.fetch, "blk")), 1e-12);
}

TEST(SpatialAttention, ZeroWeights) {
  Block b = make_block({.channels = 4, .splits = 1, .reduction = 2}, 6);
  zero(b.params, "blk.sa.w");
  zero(b.params, "blk.sa.b");
  std::mt19937_64 rng(7);
  for (double v : spatial_attention(random_tensor({1, 4, 6, 6}, rng), b.params, "blk").data()) EXPECT_EQ(v, 0.0);
}

TEST(FusePrompt, ZeroAttentionPathMatchesOracle) {
  Block b = make_block({.channels = 2, .splits = 1, .reduction = 2}, 8);
  for (const char* n : {"blk.ca.l2.w", "blk.ca.l2.b", "blk.sa.w", "blk.sa.b"}) zero(b.params, n);
  std::mt19937_64 rng(9);
  const Tensor f = random_tensor({1, 2, 2, 2}, rng);
  const Tensor prompt = random_tensor({1, 2, 2, 2}, rng);
  const Tensor fp = fuse_prompt(f, prompt, b.params, "blk");
  EXPECT_EQ(fp.shape(), f.shape());
  EXPECT_LT(max_abs_diff(fp.data(), oracle::fuse_prompt(values(f), dims(f), values(prompt), b.fetch, "blk")), 1e-12);
}

TEST(FusePrompt, FullPathMatchesOracleWithBatchBroadcast) {
  Block b = make_block({.channels = 4, .splits = 1, .reduction = 2}, 10);
  std::mt19937_64 rng(11);
  const Tensor f = random_tensor({2, 4, 3, 5}, rng);
  const Tensor prompt = random_tensor({1, 4, 3, 5}, rng);
  const Tensor fp = fuse_prompt(f, prompt, b.params, "blk");
  EXPECT_LT(max_abs_diff(fp.data(), oracle::fuse_prompt(values(f), dims(f), values(prompt), b.fetch, "blk")), 1e-12);
}

TEST(FusePrompt, ZeroPromptAndZeroProjection) {
  Block b = make_block({.channels = 4, .splits = 1, .reduction = 2}, 12);
  for (const char* n : {"blk.fuse.dw.w", "blk.fuse.dw.b", "blk.fuse.pw.w", "blk.fuse.pw.b", "blk.proj.w", "blk.proj.b"}) {
    zero(b.params, n);
  }
  std::mt19937_64 rng(13);
  const Tensor fp = fuse_prompt(random_tensor({1, 4, 4, 4}, rng), Tensor::zeros({1, 4, 2, 2}), b.params, "blk");
  for (double v : fp.data()) EXPECT_EQ(v, 0.0);
}

TEST(FusePrompt, PromptChannelMismatchIsConfigError) {
  Block b = make_block({.channels = 4, .splits = 1, .reduction = 2}, 14);
  std::mt19937_64 rng(15);
  EXPECT_THROW(fuse_prompt(random_tensor({1, 4, 4, 4}, rng), Tensor::zeros({1, 3, 4, 4}), b.params, "blk"),
               ConfigError);
}

TEST(SplitChannels, PartsAndRoundTrip) {
  std::mt19937_64 rng(16);
  const Tensor x = random_tensor({1, 4, 3, 3}, rng);
  const auto one = split_channels(x, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(values(one[0]), values(x));
  const auto two = split_channels(x, 2);
  EXPECT_EQ(two[0].at(0, 1, 2, 2), x.at(0, 1, 2, 2));
  EXPECT_EQ(two[1].at(0, 0, 1, 1), x.at(0, 2, 1, 1));
  EXPECT_EQ(values(concat_channels(split_channels(x, 4))), values(x));
  EXPECT_THROW(split_channels(x, 3), ConfigError);
}

TEST(Mdta, MatchesOracleOnTinyInput) {
  Block b = make_block({.channels = 2, .splits = 1, .reduction = 2, .heads = 1}, 17);
  std::mt19937_64 rng(18);
  const Tensor x = random_tensor({1, 2, 2, 2}, rng);
  for (SigmaMode mode : {SigmaMode::softmax, SigmaMode::sigmoid}) {
    const bool sm = mode == SigmaMode::softmax;
    const Tensor out = mdta(x, b.params, "blk.part0.mdta", 1, mode);
    EXPECT_LT(max_abs_diff(out.data(), oracle::mdta(values(x), dims(x), b.fetch, "blk.part0.mdta", 1, sm)), 1e-12);
  }
}

TEST(Mdta, MultiHeadMatchesOracle) {
  Block b = make_block({.channels = 8, .splits = 2, .reduction = 2, .heads = 2}, 19);
  std::mt19937_64 rng(20);
  const Tensor x = random_tensor({2, 4, 3, 4}, rng);
  const Tensor out = mdta(x, b.params, "blk.part1.mdta", 2, SigmaMode::softmax);
  EXPECT_LT(max_abs_diff(out.data(), oracle::mdta(values(x), dims(x), b.fetch, "blk.part1.mdta", 2, true)), 1e-12);
}

TEST(Mdta, AttentionRowsNormalised) {
  Block b = make_block({.channels = 16, .splits = 2, .reduction = 4, .heads = 2}, 21);
  std::mt19937_64 rng(22);
  const Tensor x = random_tensor({1, 8, 6, 6}, rng);
  const Tensor soft = mdta_attention(x, b.params, "blk.part0.mdta", 2, SigmaMode::softmax);
  EXPECT_EQ(soft.shape(), (Shape{1, 2, 4, 4}));
  for (int h = 0; h < 2; ++h)
    for (int i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) {
        EXPECT_GE(soft.at(0, h, i, j), 0.0);
        s += soft.at(0, h, i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  for (double v : mdta_attention(x, b.params, "blk.part0.mdta", 2, SigmaMode::sigmoid).data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Mdta, ResidualIdentityWithZeroProjections) {
  Block b = make_block({.channels = 4, .splits = 1, .reduction = 2}, 23);
  std::mt19937_64 rng(24);
  const Tensor x = random_tensor({1, 4, 5, 5}, rng);
  ParamStore zv = b.params.clone();
  zero(zv, "blk.part0.mdta.v.pw.w");
  zero(zv, "blk.part0.mdta.out.w");
  EXPECT_EQ(values(mdta(x, zv, "blk.part0.mdta", 1, SigmaMode::softmax)), values(x));
  ParamStore zo = b.params.clone();
  zero(zo, "blk.part0.mdta.out.w");
  EXPECT_EQ(values(mdta(x, zo, "blk.part0.mdta", 1, SigmaMode::softmax)), values(x));
}

TEST(Gdfn, MatchesOracleOnTinyInput) {
  Block b = make_block({.channels = 2, .splits = 1, .reduction = 2}, 25);
  std::mt19937_64 rng(26);
  const Tensor x = random_tensor({1, 2, 2, 2}, rng);
  const Tensor out = gdfn(x, b.params, "blk.part0.gdfn");
  EXPECT_LT(max_abs_diff(out.data(), oracle::gdfn(values(x), dims(x), b.fetch, "blk.part0.gdfn")), 1e-12);
}

TEST(Gdfn, ResidualIdentities) {
  Block b = make_block({.channels = 4, .splits = 1, .reduction = 2}, 27);
  std::mt19937_64 rng(28);
  const Tensor x = random_tensor({1, 4, 5, 5}, rng);
  ParamStore zo = b.params.clone();
  zero(zo, "blk.part0.gdfn.out.w");
  EXPECT_EQ(values(gdfn(x, zo, "blk.part0.gdfn")), values(x));
  ParamStore zg = b.params.clone();
  zero(zg, "blk.part0.gdfn.x2.pw.w");
  zero(zg, "blk.part0.gdfn.x2.dw.w");
  EXPECT_EQ(values(gdfn(x, zg, "blk.part0.gdfn")), values(x));
  EXPECT_EQ(gdfn_hidden(4, 2.66), 10);
}

TEST(CpbForward, MatchesOracle) {
  for (int splits : {1, 2, 4}) {
    Block b = make_block({.channels = 4, .splits = splits, .reduction = 2}, 29 + splits);
    std::mt19937_64 rng(30);
    const Tensor f = random_tensor({1, 4, 3, 3}, rng);
    const Tensor prompt = random_tensor({1, 4, 3, 3}, rng);
    const Tensor out = cpb_forward(f, prompt, b.cfg, b.params, "blk");
    EXPECT_EQ(out.shape(), f.shape());
    const oracle::Vec ref = oracle::cpb(values(f), dims(f), values(prompt), b.fetch, "blk", splits, 1, true);
    EXPECT_LT(max_abs_diff(out.data(), ref), 1e-12) << "n=" << splits;
  }
}

TEST(CpbForward, AllZeroParametersGiveZero) {
  Block b = make_block({.channels = 8, .splits = 4, .reduction = 2}, 33);
  // The attention temperature divides the logits, so it keeps its init value.
  for (auto& [name, t] : b.params) {
    const bool temperature = name.ends_with(".alpha");
    for (double& v : t.mutable_data()) v = temperature ? 1.0 : 0.0;
  }
  std::mt19937_64 rng(34);
  const Tensor out = cpb_forward(random_tensor({1, 8, 4, 4}, rng), random_tensor({1, 8, 2, 2}, rng), b.cfg,
                                 b.params, "blk");
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(CpbForward, SplitCountChangesValuesNotShape) {
  std::mt19937_64 rng(35);
  const Tensor f = random_tensor({1, 8, 6, 6}, rng);
  const Tensor prompt = random_tensor({1, 8, 3, 3}, rng);
  Block b2 = make_block({.channels = 8, .splits = 2, .reduction = 2}, 36);
  Block b4 = make_block({.channels = 8, .splits = 4, .reduction = 2}, 36);
  const Tensor o2 = cpb_forward(f, prompt, b2.cfg, b2.params, "blk");
  const Tensor o4 = cpb_forward(f, prompt, b4.cfg, b4.params, "blk");
  EXPECT_EQ(o2.shape(), o4.shape());
  EXPECT_GT(max_abs_diff(o2.data(), o4.data()), 1e-6);
}

TEST(CpbForward, PartOrderIndependent) {
  Block b = make_block({.channels = 8, .splits = 4, .reduction = 2}, 37);
  std::mt19937_64 rng(38);
  const Tensor f = random_tensor({1, 8, 4, 4}, rng);
  const Tensor prompt = random_tensor({1, 8, 4, 4}, rng);
  const Tensor reference = cpb_forward(f, prompt, b.cfg, b.params, "blk");
  const auto parts = split_channels(fuse_prompt(f, prompt, b.params, "blk"), 4);
  std::vector<Tensor> out(4);
  for (int j : {3, 1, 0, 2}) {
    const std::string pre = "blk.part" + std::to_string(j);
    out[j] = gdfn(mdta(parts[j], b.params, pre + ".mdta", 1, SigmaMode::softmax), b.params, pre + ".gdfn");
  }
  EXPECT_EQ(values(concat_channels(out)), values(reference));
}

TEST(Spb, Identities) {
  std::mt19937_64 rng(39);
  ParamStore p;
  init_spb(p, "s", 4, rng);
  testing::randomize(p, 40);
  const Tensor f = random_tensor({1, 4, 4, 4}, rng);
  const Tensor out = spb_forward(f, Tensor::zeros({1, 4, 2, 2}), p, "s");
  EXPECT_EQ(out.shape(), f.shape());
  // Zero prompt: only the f-half of the projection contributes.
  ParamStore half = p.clone();
  auto w = half.at("s.proj.w").mutable_data();
  for (int co = 0; co < 4; ++co)
    for (int ci = 4; ci < 8; ++ci) w[co * 8 + ci] = 123.0;
  EXPECT_LT(max_abs_diff(spb_forward(f, Tensor::zeros({1, 4, 2, 2}), half, "s").data(), out.data()), 1e-15);
  // Unit prompt: concat is [f, f], equal to folding both halves.
  ParamStore folded;
  std::mt19937_64 r2(41);
  init_spb(folded, "s", 4, r2);
  auto fw = folded.at("s.proj.w").mutable_data();
  const auto pw = p.at("s.proj.w").data();
  for (int co = 0; co < 4; ++co)
    for (int ci = 0; ci < 4; ++ci) {
      fw[co * 8 + ci] = pw[co * 8 + ci] + pw[co * 8 + 4 + ci];
      fw[co * 8 + 4 + ci] = 0.0;
    }
  for (std::size_t i = 0; i < 4; ++i) folded.at("s.proj.b").mutable_data()[i] = p.at("s.proj.b").data()[i];
  EXPECT_LT(max_abs_diff(spb_forward(f, Tensor::full({1, 4, 3, 3}, 1.0), p, "s").data(),
                         spb_forward(f, Tensor::zeros({1, 4, 1, 1}), folded, "s").data()),
            1e-12);
  EXPECT_THROW(spb_forward(f, Tensor::zeros({1, 2, 2, 2}), p, "s"), ConfigError);
}

GradCheckReport check_block(const CpbConfig& cfg, std::uint64_t seed) {
  Block b = make_block(cfg, seed);
  std::mt19937_64 rng(seed + 7);
  b.params.add("input.f", random_tensor({1, cfg.channels, 8, 8}, rng));
  b.params.add("input.prompt", random_tensor({1, cfg.channels, 4, 4}, rng));
  return grad_check(
      "cpb_forward",
      [cfg](const ParamStore& p) {
        return testing::probe_loss(cpb_forward(p.at("input.f"), p.at("input.prompt"), cfg, p, "blk"));
      },
      b.params, 1e-4);
}

TEST(CpbGrad, SplitsTwoAndFour) {
  for (int n : {2, 4}) {
    const GradCheckReport r = check_block({.channels = 8, .splits = n, .reduction = 2}, 50 + n);
    EXPECT_TRUE(r.pass) << "n=" << n << " max rel " << r.max_rel_error;
  }
}

TEST(CpbGrad, SigmoidModeAndHeads) {
  const GradCheckReport r =
      check_block({.channels = 8, .splits = 2, .reduction = 4, .heads = 2, .sigma_mode = SigmaMode::sigmoid}, 60);
  EXPECT_TRUE(r.pass) << r.max_rel_error;
}

TEST(SpbGrad, Passes) {
  std::mt19937_64 rng(70);
  ParamStore p;
  init_spb(p, "s", 8, rng);
  p.add("input.f", random_tensor({1, 8, 8, 8}, rng));
  p.add("input.prompt", random_tensor({1, 8, 4, 4}, rng));
  const auto r = grad_check(
      "spb_forward",
      [](const ParamStore& q) { return testing::probe_loss(spb_forward(q.at("input.f"), q.at("input.prompt"), q, "s")); },
      p, 1e-4);
  EXPECT_TRUE(r.pass) << r.max_rel_error;
}

}  // namespace
}  // namespace cpa

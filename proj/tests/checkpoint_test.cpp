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

#include <filesystem>
#include <fstream>

#include "cpa/errors.hpp"
#include "cpa/param_store.hpp"
#include "test_util.hpp"

namespace cpa {
namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cpa_ckpt_" + name);
}

TEST(ParamStoreTest, DuplicateNamesRejected) {
  ParamStore ps;
  ps.add("a", Tensor::zeros({1, 1, 1, 1}));
  EXPECT_THROW(ps.add("a", Tensor::zeros({1, 1, 1, 1})), ConsistencyError);
  EXPECT_THROW(ps.at("missing"), ConsistencyError);
  EXPECT_TRUE(ps.at("a").requires_grad());
}

TEST(ParamStoreTest, IterationIsLexicographic) {
  ParamStore ps;
  for (const char* n : {"cpb.L2.x", "cgm.p3", "cpb.L1.y", "a"}) ps.add(n, Tensor::zeros({1, 1, 1, 1}));
  std::vector<std::string> names;
  for (const auto& [n, _] : ps) names.push_back(n);
  EXPECT_EQ(names, (std::vector<std::string>{"a", "cgm.p3", "cpb.L1.y", "cpb.L2.x"}));
}

TEST(CheckpointTest, RoundTripPreservesValuesAndOrder) {
  std::mt19937_64 rng(1);
  ParamStore ps;
  ps.add("z.w", testing::random_tensor({2, 3, 3, 3}, rng));
  ps.add("a.b", testing::random_tensor({1, 4, 1, 1}, rng));
  const auto path = temp_file("rt.bin");
  save_checkpoint(path, ps);
  const ParamStore back = load_checkpoint(path);
  ASSERT_EQ(back.size(), 2u);
  for (const auto& [name, t] : ps) {
    EXPECT_EQ(back.at(name).shape(), t.shape());
    EXPECT_EQ(testing::max_abs_diff(back.at(name).data(), t.data()), 0.0);
  }
  save_checkpoint(path, ps, DType::f32);
  const ParamStore f32 = load_checkpoint(path);
  EXPECT_LT(testing::max_abs_diff(f32.at("z.w").data(), ps.at("z.w").data()), 1e-7);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, HeaderLayoutIsBitExact) {
  ParamStore ps;
  ps.add("ab", Tensor::from({1, 1, 1, 1}, {1.0}));
  const auto path = temp_file("layout.bin");
  save_checkpoint(path, ps);
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), {});
  // magic, version, name length, name, dtype, dims, payload
  const std::vector<unsigned char> expected = {'C', 'P', 'A', 'E', 1, 0, 0, 0, 2, 0, 0, 0, 'a', 'b', 8,
                                               1,   0,   0,   0,   1, 0, 0, 0, 1, 0, 0, 0, 1,   0,   0,
                                               0,   0,   0,   0,   0, 0, 0, 0xF0, 0x3F};
  EXPECT_EQ(bytes, expected);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, RejectsBadMagicAndTruncation) {
  const auto path = temp_file("bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  EXPECT_THROW(load_checkpoint(path), InputError);
  ParamStore ps;
  ps.add("w", Tensor::zeros({1, 1, 2, 2}));
  save_checkpoint(path, ps);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), InputError);
  EXPECT_THROW(load_checkpoint(temp_file("does_not_exist")), InputError);
  std::filesystem::remove(path);
}

TEST(ParamStoreTest, BindAliasesStorage) {
  ParamStore ps;
  ps.add("w", Tensor::full({1, 1, 1, 2}, 1.0));
  ParamStore bound = ps.bind();
  ps.at("w").mutable_data()[1] = 5.0;
  EXPECT_EQ(bound.at("w").data()[1], 5.0);
  ParamStore copy = ps.clone();
  ps.at("w").mutable_data()[1] = 6.0;
  EXPECT_EQ(copy.at("w").data()[1], 5.0);
}

}  // namespace
}  // namespace cpa

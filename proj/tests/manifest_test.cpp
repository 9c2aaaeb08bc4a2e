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
#include <sstream>

#include "cpa/degrade.hpp"
#include "cpa/errors.hpp"

namespace cpa::degrade {
namespace {

namespace fs = std::filesystem;

class ManifestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cpa_manifest_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "src");
  }
  void TearDown() override { fs::remove_all(dir_); }

  void populate(int count) {
    for (int i = 0; i < count; ++i) {
      Image img(12, 16, 3, 0.1f * static_cast<float>(i % 10));
      write_image(dir_ / "src" / ("img" + std::to_string(i) + ".png"), img);
    }
  }

  fs::path dir_;
};

std::vector<DegradationSpec> four_kinds() {
  return {{Kind::fog, std::monostate{}, 0},
          {Kind::dark, std::monostate{}, 0},
          {Kind::rain, std::monostate{}, 0},
          {Kind::noise, std::monostate{}, 0}};
}

std::size_t count_degraded(const DatasetManifest& m) {
  std::size_t k = 0;
  for (const auto& e : m.entries) k += e.spec.kind != Kind::none;
  return k;
}

TEST_F(ManifestTest, TwoThirdsOfNineIsSix) {
  populate(9);
  const auto m = build_manifest(dir_ / "src", four_kinds(), 2.0 / 3.0, 42, dir_ / "out");
  ASSERT_EQ(m.entries.size(), 9u);
  EXPECT_EQ(count_degraded(m), 6u);
}

TEST_F(ManifestTest, ZeroMixPassesEverythingThrough) {
  populate(5);
  const auto m = build_manifest(dir_ / "src", four_kinds(), 0.0, 1, dir_ / "out");
  EXPECT_EQ(count_degraded(m), 0u);
  const auto none_only = build_manifest(dir_ / "src", {}, 0.0, 1, dir_ / "out");
  EXPECT_EQ(count_degraded(none_only), 0u);
}

TEST_F(ManifestTest, FullMixCyclesKinds) {
  populate(8);
  const auto m = build_manifest(dir_ / "src", four_kinds(), 1.0, 3, dir_ / "out");
  ASSERT_EQ(count_degraded(m), 8u);
  std::map<Kind, int> per_kind;
  for (const auto& e : m.entries) per_kind[e.spec.kind]++;
  for (Kind k : {Kind::fog, Kind::dark, Kind::rain, Kind::noise}) EXPECT_EQ(per_kind[k], 2);
}

TEST_F(ManifestTest, SameSeedSameManifest) {
  populate(9);
  const auto a = build_manifest(dir_ / "src", four_kinds(), 2.0 / 3.0, 7, dir_ / "out");
  const auto b = build_manifest(dir_ / "src", four_kinds(), 2.0 / 3.0, 7, dir_ / "out");
  write_manifest(dir_ / "a.jsonl", a);
  write_manifest(dir_ / "b.jsonl", b);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(dir_ / "a.jsonl"), slurp(dir_ / "b.jsonl"));
  const auto c = build_manifest(dir_ / "src", four_kinds(), 2.0 / 3.0, 8, dir_ / "out");
  write_manifest(dir_ / "c.jsonl", c);
  EXPECT_NE(slurp(dir_ / "a.jsonl"), slurp(dir_ / "c.jsonl"));
}

TEST_F(ManifestTest, RoundTripKeepsSpecsVerbatim) {
  populate(6);
  std::vector<DegradationSpec> specs = four_kinds();
  specs.push_back({Kind::snow, SnowParams{"heavy", ""}, 0});
  specs.push_back({Kind::rain, RainParams{0.6, true, {0.95, 60.0, 9}}, 0});
  const auto m = build_manifest(dir_ / "src", specs, 1.0, 5, dir_ / "out");
  write_manifest(dir_ / "m.jsonl", m);
  const auto r = read_manifest(dir_ / "m.jsonl");
  ASSERT_EQ(r.entries.size(), m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_EQ(r.entries[i].src, m.entries[i].src);
    EXPECT_EQ(r.entries[i].dst, m.entries[i].dst);
    EXPECT_EQ(r.entries[i].spec.kind, m.entries[i].spec.kind);
    EXPECT_EQ(r.entries[i].spec.seed, m.entries[i].spec.seed);
    EXPECT_EQ(params_to_json(r.entries[i].spec), params_to_json(m.entries[i].spec));
  }
}

TEST_F(ManifestTest, PathsAreUniqueAndAnnotationsFound) {
  populate(4);
  std::ofstream(dir_ / "src" / "img2.xml") << "<annotation/>";
  const auto m = build_manifest(dir_ / "src", four_kinds(), 0.5, 9, dir_ / "out");
  std::set<std::string> dsts;
  for (const auto& e : m.entries) {
    EXPECT_TRUE(dsts.insert(e.dst).second);
    EXPECT_EQ(e.annotation.has_value(), fs::path(e.src).stem() == "img2");
  }
}

TEST_F(ManifestTest, MaterializeWritesEveryDestination) {
  populate(4);
  const auto m = build_manifest(dir_ / "src", four_kinds(), 1.0, 2, dir_ / "out");
  materialize(m);
  for (const auto& e : m.entries) {
    const Image src = read_image(e.src);
    const Image dst = read_image(e.dst);
    EXPECT_EQ(dst.height, src.height);
    EXPECT_EQ(dst.width, src.width);
  }
}

TEST_F(ManifestTest, EmptyDirectoryIsInputError) {
  EXPECT_THROW(build_manifest(dir_ / "src", four_kinds(), 0.5, 0, dir_ / "out"), InputError);
  EXPECT_THROW(build_manifest(dir_ / "missing", four_kinds(), 0.5, 0, dir_ / "out"), InputError);
  populate(2);
  EXPECT_THROW(build_manifest(dir_ / "src", four_kinds(), 1.5, 0, dir_ / "out"), ParameterError);
}

TEST(MixSeed, DistinctPerIndex) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix_seed(42, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
}

}  // namespace
}  // namespace cpa::degrade

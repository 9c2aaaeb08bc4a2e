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

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "cpa/tensor.hpp"

namespace cpa {

/// Named trainable tensors. Iteration is lexicographic by name, which is
/// also the checkpoint entry order.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Registers `value` as a trainable leaf; throws ConsistencyError when the
  /// name is taken.
  Tensor& add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  void zero_grad();

  /// Fresh leaves over the same storage, each with its own gradient buffer.
  /// Used to run independent forward/backward passes per sample.
  ParamStore bind() const;
  /// Deep copy.
  ParamStore clone() const;

 private:
  Map entries_;
};

/// Kaiming-uniform over fan-in with negative slope sqrt(5), i.e. the
/// common conv default U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng);
/// Unit-gain uniform: U(-sqrt(3 / fan_in), sqrt(3 / fan_in)), which keeps the
/// output variance of a linear layer equal to its input variance.
Tensor lecun_uniform(Shape shape, double fan_in, std::mt19937_64& rng);
Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng);

enum class DType : std::uint8_t { f32 = 4, f64 = 8 };

/// Flat binary container: "CPAE", u32 version, then per entry
/// u32 name length, UTF-8 name, u8 dtype, 4 x u32 dims, little-endian payload.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, DType dtype = DType::f64);
ParamStore load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace cpa

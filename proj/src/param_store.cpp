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

#include "cpa/param_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cpa/errors.hpp"

namespace cpa {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw ConsistencyError("parameter name must not be empty");
  if (contains(name)) throw ConsistencyError("parameter '" + name + "' registered twice");
  Tensor leaf = value.requires_grad() && value.op() == "leaf" ? value : value.clone(true);
  return entries_.emplace(name, std::move(leaf)).first->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConsistencyError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConsistencyError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [_, t] : entries_) total += t.numel();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

ParamStore ParamStore::bind() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.entries_.emplace(name, t.alias_leaf(true));
  return out;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.entries_.emplace(name, t.clone(true));
  return out;
}

Tensor lecun_uniform(Shape shape, double fan_in, std::mt19937_64& rng) {
  if (!(fan_in > 0.0)) throw ConfigError("fan_in must be positive");
  const double bound = std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v), true);
}

Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  // gain sqrt(2 / (1 + a^2)) with a = sqrt(5) gives bound = 1 / sqrt(fan_in).
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v), true);
}

Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape.numel());
  for (double& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v), true);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kMagic{'C', 'P', 'A', 'E'};

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& value) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  std::memcpy(&value, bytes.data(), sizeof(T));
  return true;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, DType dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
    const Shape s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
      if (dtype == DType::f64) {
        put_le<double>(os, v);
      } else {
        put_le<float>(os, static_cast<float>(v));
      }
    }
  }
  if (!os) throw InputError("failed writing checkpoint: " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint: " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw InputError("not a checkpoint (bad magic): " + path.string());
  }
  std::uint32_t version = 0;
  if (!get_le(is, version) || version != kCheckpointVersion) {
    throw InputError("unsupported checkpoint version in " + path.string());
  }
  ParamStore out;
  while (true) {
    std::uint32_t name_len = 0;
    if (!get_le(is, name_len)) break;  // clean end of file
    if (name_len == 0 || name_len > 4096) throw InputError("corrupt checkpoint entry name in " + path.string());
    std::string name(name_len, '\0');
    std::uint8_t tag = 0;
    std::array<std::uint32_t, 4> d{};
    bool ok = static_cast<bool>(is.read(name.data(), name_len)) && get_le(is, tag);
    for (auto& x : d) ok = ok && get_le(is, x);
    if (!ok) throw InputError("truncated checkpoint entry '" + name + "'");
    if (tag != static_cast<std::uint8_t>(DType::f32) && tag != static_cast<std::uint8_t>(DType::f64)) {
      throw InputError("unknown dtype tag " + std::to_string(tag) + " for '" + name + "'");
    }
    const Shape shape{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]),
                      static_cast<int>(d[3])};
    std::vector<double> values(shape.numel());
    for (double& v : values) {
      if (tag == static_cast<std::uint8_t>(DType::f64)) {
        ok = get_le(is, v);
      } else {
        float f = 0;
        ok = get_le(is, f);
        v = f;
      }
      if (!ok) throw InputError("truncated payload for '" + name + "'");
    }
    out.add(name, Tensor::from(shape, std::move(values), true));
  }
  return out;
}

}  // namespace cpa

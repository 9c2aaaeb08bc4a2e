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
#include <functional>
#include <string>
#include <vector>

#include "cpa/param_store.hpp"

namespace cpa {

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::vector<ParamCheck> params;
  bool pass = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Tensors larger than this are probed on a random subset of this size.
  std::size_t max_elements = 64;
  std::uint64_t seed = 0;
  // Denominator floor. With step 1e-5 the central difference carries an
  // absolute roundoff of a few 1e-9 on network-sized losses, so gradients
  // below this are compared absolutely (at tol * floor) instead.
  double floor = 1e-4;
};

using ScalarFn = std::function<Tensor(const ParamStore&)>;

/// Central-difference check of the tape gradient of `fn` with respect to
/// every tensor in `params`. Relative error per element is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const std::string& op, const ScalarFn& fn, ParamStore& params, double tol,
                           const GradCheckOptions& options = {});

}  // namespace cpa

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

#include "cpa/gradcheck.hpp"

namespace cpa {

/// Names of the registered cases: every differentiable op, then the
/// composite blocks (attention, fusion, MDTA, GDFN, CPB, SPB, CGM, RFA).
std::vector<std::string> grad_suite_names();

/// Runs the central-difference check on every case whose name contains
/// `filter` (all when empty). Inputs are at most 1 x 8 x 8 x 8 and drawn
/// from `seed`. `on_report` sees each result as soon as it is ready.
std::vector<GradCheckReport> run_grad_suite(double tol, std::uint64_t seed, const std::string& filter = {},
                                            const std::function<void(const GradCheckReport&)>& on_report = {});

}  // namespace cpa

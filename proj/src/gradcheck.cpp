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

#include "cpa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cpa/errors.hpp"

namespace cpa {

namespace {

double evaluate(const ScalarFn& fn, const ParamStore& params) {
  NoGradGuard no_grad;
  const Tensor out = fn(params);
  if (out.numel() != 1) throw UsageError("grad_check needs a scalar function, got " + out.shape().str());
  return out.item();
}

}  // namespace

GradCheckReport grad_check(const std::string& op, const ScalarFn& fn, ParamStore& params, double tol,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = op;
  report.tolerance = tol;

  params.zero_grad();
  Tensor out = fn(params);
  if (out.numel() != 1) throw UsageError("grad_check needs a scalar function, got " + out.shape().str());
  out.backward();

  std::mt19937_64 rng(options.seed);
  for (auto& [name, tensor] : params) {
    ParamCheck check;
    check.name = name;
    const std::size_t count = tensor.numel();
    std::vector<std::size_t> indices(count);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (count > options.max_elements) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements);
      std::sort(indices.begin(), indices.end());
    }
    const std::vector<double> analytic =
        tensor.has_grad() ? std::vector<double>(tensor.grad().begin(), tensor.grad().end())
                          : std::vector<double>(count, 0.0);
    auto values = tensor.mutable_data();
    for (std::size_t i : indices) {
      const double original = values[i];
      values[i] = original + options.step;
      const double plus = evaluate(fn, params);
      values[i] = original - options.step;
      const double minus = evaluate(fn, params);
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), options.floor});
      const double rel = std::fabs(analytic[i] - numeric) / denom;
      if (rel > check.max_rel_error || check.checked == 0) {
        check.max_rel_error = std::max(rel, check.max_rel_error);
        check.worst_analytic = analytic[i];
        check.worst_numeric = numeric;
      }
      ++check.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace cpa

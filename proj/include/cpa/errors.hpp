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

#include <stdexcept>
#include <string>

namespace cpa {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or configuration (divisibility, unknown kinds).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range operation parameter (e.g. fog level, gamma).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: missing/corrupt files, empty directories, too few samples.
class InputError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced under strict mode, or a diverging loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Internal bookkeeping mismatch (duplicate parameter, missing gradient).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpa

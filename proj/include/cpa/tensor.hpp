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

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cpa {

/// NCHW extent. Every tensor in the library is rank 4; matrices are
/// carried as N x C x rows x cols.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  int dim(int axis) const;
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

struct Node {
  Shape shape;
  // Shared so that per-sample parameter leaves can alias one storage.
  std::shared_ptr<std::vector<double>> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(shape.numel(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense rank-4 tensor of doubles with an optional link into the autodiff
/// tape. Copies are cheap handles onto the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const double> data() const&;
  /// Owning copy for temporaries, so `for (double v : f(x).data())` is safe.
  std::vector<double> data() const&&;
  /// Writable view of the storage. Meant for initialisation, optimizer
  /// updates and finite-difference probes on leaves.
  std::span<double> mutable_data();
  double item() const;
  double at(int n, int c, int h, int w) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar; gradients accumulate into every
  /// reachable node that requires grad.
  void backward();

  const std::string& op() const;

  /// Deep copy with fresh storage; the result is a leaf.
  Tensor clone(bool requires_grad = false) const;
  /// New leaf aliasing this tensor's storage, with its own grad buffer.
  Tensor alias_leaf(bool requires_grad = true) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// When true, any op that produces NaN/Inf throws NumericalError.
void set_strict_finite(bool enabled);
bool strict_finite();

class StrictFiniteGuard {
 public:
  explicit StrictFiniteGuard(bool enabled) : previous_(strict_finite()) { set_strict_finite(enabled); }
  ~StrictFiniteGuard() { set_strict_finite(previous_); }
  StrictFiniteGuard(const StrictFiniteGuard&) = delete;
  StrictFiniteGuard& operator=(const StrictFiniteGuard&) = delete;

 private:
  bool previous_;
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Test hook: negates the gradient flowing out of every node whose op name
/// matches. Empty string clears it.
void set_gradient_fault(std::string op);
const std::string& gradient_fault();

namespace detail {

/// Wraps a freshly computed value into a tensor. The backward closure is
/// only kept when some parent requires grad and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> value, std::string op,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace cpa

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

#include "cpa/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "cpa/errors.hpp"

namespace cpa {

namespace {

std::atomic<bool> g_strict_finite{true};
thread_local bool t_grad_enabled = true;
std::string g_gradient_fault;

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
    throw DimensionError("tensor shape must be positive, got " + shape.str());
  }
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                         " elements, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->value = std::make_shared<std::vector<double>>(std::move(values));
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw UsageError("use of an undefined tensor");
  return *node;
}

}  // namespace

int Shape::dim(int axis) const {
  switch (axis) {
    case 0: return n;
    case 1: return c;
    case 2: return h;
    case 3: return w;
    default: throw DimensionError("axis must be in [0, 3], got " + std::to_string(axis));
  }
}

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  return Tensor(new_leaf(shape, std::vector<double>(shape.numel(), value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_leaf(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full(Shape{}, value, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::span<const double> Tensor::data() const& { return *checked(node_).value; }

std::vector<double> Tensor::data() const&& { return *checked(node_).value; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return *node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on a tensor of shape " + shape().str());
  return data()[0];
}

double Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = shape();
  if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
    throw DimensionError("index out of range for shape " + s.str());
  }
  return data()[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

const std::string& Tensor::op() const { return checked(node_).op; }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(new_leaf(shape(), std::vector<double>(data().begin(), data().end()), requires_grad));
}

Tensor Tensor::alias_leaf(bool requires_grad) const {
  const auto& src = checked(node_);
  auto node = std::make_shared<detail::Node>();
  node->shape = src.shape;
  node->value = src.value;
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return Tensor(std::move(node));
}

void Tensor::backward() {
  auto& root = checked(node_);
  if (root.shape.numel() != 1) {
    throw UsageError("backward() requires a scalar output, got shape " + root.shape.str());
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion
  // depth limits on long graphs.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  const std::string& fault = gradient_fault();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    const bool flip = !fault.empty() && node->op == fault;
    if (flip) {
      for (double& g : node->grad) g = -g;
    }
    node->backward(*node);
    if (flip) {
      for (double& g : node->grad) g = -g;
    }
  }
}

void set_strict_finite(bool enabled) { g_strict_finite.store(enabled); }
bool strict_finite() { return g_strict_finite.load(); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void set_gradient_fault(std::string op) { g_gradient_fault = std::move(op); }
const std::string& gradient_fault() { return g_gradient_fault; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> value, std::string op, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
  if (strict_finite()) {
    const bool finite = std::all_of(value.begin(), value.end(), [](double v) { return std::isfinite(v); });
    if (!finite) throw NumericalError("non-finite value produced by " + op);
  }
  auto node = new_leaf(shape, std::move(value), false);
  node->op = std::move(op);
  if (grad_enabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      node->parents.reserve(parents.size());
      for (auto& p : parents) {
        if (p.defined()) node->parents.push_back(p.node());
      }
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace cpa

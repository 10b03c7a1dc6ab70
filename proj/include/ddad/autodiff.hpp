// Copyright 2026 The ddad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ddad/tensor.hpp"

namespace ddad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction. A tape built with `record = false` still stores
/// forward values (through the same code path) but keeps no backward closures.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Differentiable input (parameter or input batch).
  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var push(Tensor value, std::span<const Var> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the adjoint of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Tensor& g);
  /// Current adjoint of node `self`; only valid inside a backward closure.
  const Tensor& adjoint(std::size_t id) const { return nodes_[id].grad; }

  /// Seeds d(output)/d(output) = 1 and propagates to every leaf. Each node is
  /// visited once, in reverse recording order.
  void backward(const Var& output);

  /// Adjoint of a node after backward(); zeros if no gradient reached it.
  Tensor grad(const Var& v) const;

  /// Number of backward closures invoked by the last backward() call.
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

// Differentiable primitives. Forward values come from ddad::ops, so a taped
// evaluation is bit-identical to an untaped one.
namespace ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, std::size_t axis);
Var trace(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
/// Subgradient 0 at exactly 0.
Var relu(const Var& a);
Var sigmoid(const Var& a);
/// Gradient passes where lo <= x <= hi.
Var clip(const Var& a, double lo, double hi);
/// max(a, floor); gradient passes only where a > floor.
Var maximum(const Var& a, double floor);
Var log_softmax(const Var& a);
Var pairwise_sqdist(const Var& x, const Var& z);
/// out[i] = a[i, idx[i]] for a 2-D tensor.
Var pick(const Var& a, std::span<const int> idx);
/// Mean cross-entropy of row-wise logits against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace ad
}  // namespace ddad

// Copyright 2026 The VLA Adapt Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lab/tensor.hpp"

namespace lab {
class ParamStore;
}

namespace lab::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Result of Tape::backward. Holds a gradient for every requires_grad leaf;
// leaves the loss does not depend on get zeros.
class Gradients {
 public:
  const Tensor& of(const Var& leaf) const;
  bool has(const Var& leaf) const { return by_id_.count(leaf.id()) != 0; }
  // Gradients of named parameters pulled from a ParamStore.
  const std::map<std::string, Tensor>& named() const { return named_; }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> by_id_;
  std::map<std::string, Tensor> named_;
};

// Records primitive ops during a forward pass. Ids increase in creation
// order, so reverse id order is a reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  // Leaf for a named parameter; requires_grad follows the parameter's
  // trainable flag. Repeated calls with the same name return the same Var.
  Var param(const ParamStore& store, const std::string& name);

  // Used by op implementations.
  Var record(Tensor value, std::string op, std::vector<std::size_t> parents, BackwardFn backward);
  bool needs_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  void accumulate(const Var& v, Tensor grad);

  Gradients backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string op;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  std::unordered_map<std::size_t, std::string> param_names_;
};

// ---- Elementwise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var square(Var a);
Var gelu(Var a);  // tanh approximation
Var tanh(Var a);

// Broadcast `v` over x. `v` has shape [D] (applied to every row of the
// last axis) or [B, D] with x of shape [B, ..., D] (one row per leading
// index).
Var add_bcast(Var x, Var v);
Var mul_bcast(Var x, Var v);

// ---- Linear algebra ----
Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
Var bmm(Var a, Var b);        // [B,m,k] x [B,k,n]
Var bmm_nt(Var a, Var b);     // [B,m,k] x [B,n,k]^T
Var transpose(Var a);         // 2-D

// ---- Shape ----
Var reshape(Var a, Shape shape);
// [a, b, c, d] -> [a, c, b, d]
Var swap_axes_12(Var a);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var gather_rows(Var table, std::span<const std::size_t> ids);

// ---- Reductions / normalisation ----
Var sum(Var a);
Var mean(Var a);
Var mean_axis(Var a, std::size_t axis);
// Softmax over the last axis. `mask` (optional) has shape [Tq, Tk] matching
// the last two axes; false entries get probability exactly 0. Every row
// must keep at least one true entry.
Var softmax(Var a, const std::vector<std::vector<bool>>* mask = nullptr);
Var log_softmax(Var a);
// out[i] = a[i, idx[i]] for a of shape [M, K].
Var pick(Var a, std::span<const std::size_t> idx);
// Divides every row of the last axis by its L2 norm. With eps == 0 a zero
// row is a ContractError; otherwise the norm is max(norm, eps).
Var l2_normalize(Var a, double eps = 0.0);

// ---- Losses ----
Var mse(Var pred, Var target);
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

}  // namespace lab::ad

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

#include "lab/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "lab/error.hpp"
#include "lab/params.hpp"

namespace lab::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap cmap(const Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return CMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}

MMap mmap(Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}

void same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis out of range for shape " + to_string(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Gradients

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Gradients::of(const Var& leaf) const {
  auto it = by_id_.find(leaf.id());
  if (it == by_id_.end()) throw ContractError("no gradient recorded for this leaf");
  return it->second;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  value.check_finite("leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  const Param& p = store.get(name);
  Var v = leaf(p.value, p.trainable);
  param_ids_.emplace(name, v.id());
  param_names_.emplace(v.id(), name);
  return v;
}

Var Tape::record(Tensor value, std::string op, std::vector<std::size_t> parents,
                 BackwardFn backward) {
  value.check_finite(op);
  Node n;
  n.value = std::move(value);
  n.op = std::move(op);
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, Tensor grad) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (grad.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + to_string(grad.shape()) + " does not match value " +
                     to_string(n.value.shape()) + " in op " + n.op);
  }
  auto& slot = grads_[v.id()];
  if (!slot) {
    slot = std::move(grad);
  } else {
    auto dst = slot->data();
    auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

Gradients Tape::backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  grads_.assign(nodes_.size(), std::nullopt);
  if (nodes_[loss.id()].requires_grad) grads_[loss.id()] = Tensor(loss.shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!grads_[i] || n.is_leaf || !n.backward) continue;
    n.backward(*this, *grads_[i]);
    grads_[i].reset();
  }
  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.is_leaf || !n.requires_grad) continue;
    Tensor g = grads_[i] ? std::move(*grads_[i]) : Tensor(n.value.shape());
    if (auto it = param_names_.find(i); it != param_names_.end()) out.named_.emplace(it->second, g);
    out.by_id_.emplace(i, std::move(g));
  }
  grads_.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  same_shape(a, b, "add");
  Tensor out = a.value() + b.value();
  return a.tape().record(std::move(out), "add", {a.id(), b.id()},
                         [a, b](Tape& t, const Tensor& g) {
                           t.accumulate(a, g);
                           t.accumulate(b, g);
                         });
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  same_shape(a, b, "sub");
  Tensor out = a.value() - b.value();
  return a.tape().record(std::move(out), "sub", {a.id(), b.id()},
                         [a, b](Tape& t, const Tensor& g) {
                           t.accumulate(a, g);
                           if (t.needs_grad(b)) t.accumulate(b, -1.0 * g);
                         });
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), "mul", {a.id(), b.id()},
                         [a, b](Tape& t, const Tensor& g) {
                           if (t.needs_grad(a)) {
                             Tensor ga = g;
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
                             t.accumulate(a, std::move(ga));
                           }
                           if (t.needs_grad(b)) {
                             Tensor gb = g;
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
                             t.accumulate(b, std::move(gb));
                           }
                         });
}

Var scale(Var a, double s) {
  return a.tape().record(s * a.value(), "scale", {a.id()},
                         [a, s](Tape& t, const Tensor& g) { t.accumulate(a, s * g); });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  return a.tape().record(std::move(out), "add_scalar", {a.id()},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= v;
  return a.tape().record(std::move(out), "square", {a.id()}, [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 2.0 * a.value()[i];
    t.accumulate(a, std::move(ga));
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;
}  // namespace

Var gelu(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) {
    const double th = std::tanh(kGeluC * (x + kGeluK * x * x * x));
    x = 0.5 * x * (1.0 + th);
  }
  return a.tape().record(std::move(out), "gelu", {a.id()}, [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    const auto& x = a.value();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double xi = x[i];
      const double th = std::tanh(kGeluC * (xi + kGeluK * xi * xi * xi));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * xi * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluK * xi * xi);
      ga[i] *= d;
    }
    t.accumulate(a, std::move(ga));
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = std::tanh(x);
  Tensor y = out;
  return a.tape().record(std::move(out), "tanh", {a.id()}, [a, y](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 1.0 - y[i] * y[i];
    t.accumulate(a, std::move(ga));
  });
}

namespace {

struct BcastLayout {
  std::size_t groups = 1;  // B
  std::size_t per = 1;     // rows per group
  std::size_t width = 1;   // D
};

BcastLayout bcast_layout(const Shape& xs, const Shape& vs, const char* op) {
  BcastLayout l;
  l.width = vs.back();
  if (xs.back() != l.width) {
    throw ShapeError(std::string(op) + ": last axis " + to_string(xs) + " vs " + to_string(vs));
  }
  if (vs.size() == 1) {
    l.groups = 1;
  } else if (vs.size() == 2 && xs.size() >= 2 && xs[0] == vs[0]) {
    l.groups = vs[0];
  } else {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(vs) + " over " +
                     to_string(xs));
  }
  l.per = numel(xs) / (l.groups * l.width);
  return l;
}

}  // namespace

Var add_bcast(Var x, Var v) {
  same_tape(x, v, "add_bcast");
  const BcastLayout l = bcast_layout(x.shape(), v.shape(), "add_bcast");
  Tensor out = x.value();
  const auto& vv = v.value();
  for (std::size_t b = 0; b < l.groups; ++b)
    for (std::size_t r = 0; r < l.per; ++r)
      for (std::size_t d = 0; d < l.width; ++d)
        out[(b * l.per + r) * l.width + d] += vv[b * l.width + d];
  return x.tape().record(std::move(out), "add_bcast", {x.id(), v.id()},
                         [x, v, l](Tape& t, const Tensor& g) {
                           t.accumulate(x, g);
                           if (!t.needs_grad(v)) return;
                           Tensor gv(v.shape());
                           for (std::size_t b = 0; b < l.groups; ++b)
                             for (std::size_t r = 0; r < l.per; ++r)
                               for (std::size_t d = 0; d < l.width; ++d)
                                 gv[b * l.width + d] += g[(b * l.per + r) * l.width + d];
                           t.accumulate(v, std::move(gv));
                         });
}

Var mul_bcast(Var x, Var v) {
  same_tape(x, v, "mul_bcast");
  const BcastLayout l = bcast_layout(x.shape(), v.shape(), "mul_bcast");
  Tensor out = x.value();
  const auto& vv = v.value();
  for (std::size_t b = 0; b < l.groups; ++b)
    for (std::size_t r = 0; r < l.per; ++r)
      for (std::size_t d = 0; d < l.width; ++d)
        out[(b * l.per + r) * l.width + d] *= vv[b * l.width + d];
  return x.tape().record(
      std::move(out), "mul_bcast", {x.id(), v.id()}, [x, v, l](Tape& t, const Tensor& g) {
        const auto& xv = x.value();
        const auto& vv = v.value();
        if (t.needs_grad(x)) {
          Tensor gx = g;
          for (std::size_t b = 0; b < l.groups; ++b)
            for (std::size_t r = 0; r < l.per; ++r)
              for (std::size_t d = 0; d < l.width; ++d)
                gx[(b * l.per + r) * l.width + d] *= vv[b * l.width + d];
          t.accumulate(x, std::move(gx));
        }
        if (t.needs_grad(v)) {
          Tensor gv(v.shape());
          for (std::size_t b = 0; b < l.groups; ++b)
            for (std::size_t r = 0; r < l.per; ++r)
              for (std::size_t d = 0; d < l.width; ++d) {
                const std::size_t i = (b * l.per + r) * l.width + d;
                gv[b * l.width + d] += g[i] * xv[i];
              }
          t.accumulate(v, std::move(gv));
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(A.shape()) + " by " +
                     to_string(B.shape()));
  }
  Tensor out = lab::matmul(A, B);
  return a.tape().record(std::move(out), "matmul", {a.id(), b.id()},
                         [a, b](Tape& t, const Tensor& g) {
                           const auto& A = a.value();
                           const auto& B = b.value();
                           const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
                           if (t.needs_grad(a)) {
                             Tensor ga({m, k});
                             mmap(ga, 0, m, k).noalias() =
                                 cmap(g, 0, m, n) * cmap(B, 0, k, n).transpose();
                             t.accumulate(a, std::move(ga));
                           }
                           if (t.needs_grad(b)) {
                             Tensor gb({k, n});
                             mmap(gb, 0, k, n).noalias() =
                                 cmap(A, 0, m, k).transpose() * cmap(g, 0, m, n);
                             t.accumulate(b, std::move(gb));
                           }
                         });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b, "matmul_nt");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1)) {
    throw ShapeError("matmul_nt: cannot multiply " + to_string(A.shape()) + " by transpose of " +
                     to_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Tensor out({m, n});
  mmap(out, 0, m, n).noalias() = cmap(A, 0, m, k) * cmap(B, 0, n, k).transpose();
  return a.tape().record(std::move(out), "matmul_nt", {a.id(), b.id()},
                         [a, b, m, k, n](Tape& t, const Tensor& g) {
                           const auto& A = a.value();
                           const auto& B = b.value();
                           if (t.needs_grad(a)) {
                             Tensor ga({m, k});
                             mmap(ga, 0, m, k).noalias() = cmap(g, 0, m, n) * cmap(B, 0, n, k);
                             t.accumulate(a, std::move(ga));
                           }
                           if (t.needs_grad(b)) {
                             Tensor gb({n, k});
                             mmap(gb, 0, n, k).noalias() =
                                 cmap(g, 0, m, n).transpose() * cmap(A, 0, m, k);
                             t.accumulate(b, std::move(gb));
                           }
                         });
}

Var bmm(Var a, Var b) {
  same_tape(a, b, "bmm");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) || A.dim(2) != B.dim(1)) {
    throw ShapeError("bmm: cannot multiply " + to_string(A.shape()) + " by " +
                     to_string(B.shape()));
  }
  const std::size_t nb = A.dim(0), m = A.dim(1), k = A.dim(2), n = B.dim(2);
  Tensor out({nb, m, n});
  for (std::size_t i = 0; i < nb; ++i)
    mmap(out, i * m * n, m, n).noalias() = cmap(A, i * m * k, m, k) * cmap(B, i * k * n, k, n);
  return a.tape().record(
      std::move(out), "bmm", {a.id(), b.id()}, [a, b, nb, m, k, n](Tape& t, const Tensor& g) {
        const auto& A = a.value();
        const auto& B = b.value();
        if (t.needs_grad(a)) {
          Tensor ga({nb, m, k});
          for (std::size_t i = 0; i < nb; ++i)
            mmap(ga, i * m * k, m, k).noalias() =
                cmap(g, i * m * n, m, n) * cmap(B, i * k * n, k, n).transpose();
          t.accumulate(a, std::move(ga));
        }
        if (t.needs_grad(b)) {
          Tensor gb({nb, k, n});
          for (std::size_t i = 0; i < nb; ++i)
            mmap(gb, i * k * n, k, n).noalias() =
                cmap(A, i * m * k, m, k).transpose() * cmap(g, i * m * n, m, n);
          t.accumulate(b, std::move(gb));
        }
      });
}

Var bmm_nt(Var a, Var b) {
  same_tape(a, b, "bmm_nt");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) || A.dim(2) != B.dim(2)) {
    throw ShapeError("bmm_nt: cannot multiply " + to_string(A.shape()) + " by transpose of " +
                     to_string(B.shape()));
  }
  const std::size_t nb = A.dim(0), m = A.dim(1), k = A.dim(2), n = B.dim(1);
  Tensor out({nb, m, n});
  for (std::size_t i = 0; i < nb; ++i)
    mmap(out, i * m * n, m, n).noalias() =
        cmap(A, i * m * k, m, k) * cmap(B, i * n * k, n, k).transpose();
  return a.tape().record(
      std::move(out), "bmm_nt", {a.id(), b.id()}, [a, b, nb, m, k, n](Tape& t, const Tensor& g) {
        const auto& A = a.value();
        const auto& B = b.value();
        if (t.needs_grad(a)) {
          Tensor ga({nb, m, k});
          for (std::size_t i = 0; i < nb; ++i)
            mmap(ga, i * m * k, m, k).noalias() =
                cmap(g, i * m * n, m, n) * cmap(B, i * n * k, n, k);
          t.accumulate(a, std::move(ga));
        }
        if (t.needs_grad(b)) {
          Tensor gb({nb, n, k});
          for (std::size_t i = 0; i < nb; ++i)
            mmap(gb, i * n * k, n, k).noalias() =
                cmap(g, i * m * n, m, n).transpose() * cmap(A, i * m * k, m, k);
          t.accumulate(b, std::move(gb));
        }
      });
}

Var transpose(Var a) {
  if (a.value().rank() != 2) throw ShapeError("transpose needs a matrix");
  return a.tape().record(a.value().transposed(), "transpose", {a.id()},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g.transposed()); });
}

// ---------------------------------------------------------------------------
// Shape

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), "reshape", {a.id()}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, g.reshaped(a.shape()));
  });
}

namespace {
Tensor swap12(const Tensor& x) {
  const auto& s = x.shape();
  const std::size_t n0 = s[0], n1 = s[1], n2 = s[2], n3 = s[3];
  Tensor out({n0, n2, n1, n3});
  for (std::size_t a = 0; a < n0; ++a)
    for (std::size_t b = 0; b < n1; ++b)
      for (std::size_t c = 0; c < n2; ++c) {
        const double* src = x.data().data() + ((a * n1 + b) * n2 + c) * n3;
        double* dst = out.data().data() + ((a * n2 + c) * n1 + b) * n3;
        std::copy(src, src + n3, dst);
      }
  return out;
}
}  // namespace

Var swap_axes_12(Var a) {
  if (a.value().rank() != 4) throw ShapeError("swap_axes_12 needs a rank-4 tensor");
  return a.tape().record(swap12(a.value()), "swap_axes_12", {a.id()},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, swap12(g)); });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Tape& tape = parts[0].tape();
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat");
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) {
        throw ShapeError("concat: " + to_string(s) + " vs " + to_string(out_shape));
      }
    }
    total += s[axis];
  }
  out_shape[axis] = total;
  const AxisSplit os = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const AxisSplit ps = split_at(p.shape(), axis);
    const auto& pv = p.value();
    for (std::size_t o = 0; o < os.outer; ++o) {
      const double* src = pv.data().data() + o * ps.len * ps.inner;
      double* dst = out.data().data() + (o * os.len + offset) * os.inner;
      std::copy(src, src + ps.len * ps.inner, dst);
    }
    offset += ps.len;
    ids.push_back(p.id());
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return tape.record(std::move(out), "concat", std::move(ids),
                     [keep, axis, os](Tape& t, const Tensor& g) {
                       std::size_t offset = 0;
                       for (const Var& p : keep) {
                         const AxisSplit ps = split_at(p.shape(), axis);
                         if (t.needs_grad(p)) {
                           Tensor gp(p.shape());
                           for (std::size_t o = 0; o < os.outer; ++o) {
                             const double* src = g.data().data() + (o * os.len + offset) * os.inner;
                             std::copy(src, src + ps.len * ps.inner,
                                       gp.data().data() + o * ps.len * ps.inner);
                           }
                           t.accumulate(p, std::move(gp));
                         }
                         offset += ps.len;
                       }
                     });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_at(a.shape(), axis);
  if (length == 0 || start + length > s.len) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of length " + std::to_string(s.len));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  const auto& av = a.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = av.data().data() + (o * s.len + start) * s.inner;
    std::copy(src, src + length * s.inner, out.data().data() + o * length * s.inner);
  }
  return a.tape().record(std::move(out), "slice", {a.id()},
                         [a, s, start, length](Tape& t, const Tensor& g) {
                           Tensor ga(a.shape());
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src = g.data().data() + o * length * s.inner;
                             std::copy(src, src + length * s.inner,
                                       ga.data().data() + (o * s.len + start) * s.inner);
                           }
                           t.accumulate(a, std::move(ga));
                         });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("gather_rows needs a 2-D table");
  if (ids.empty()) throw ContractError("gather_rows with no ids");
  const std::size_t width = tv.dim(1);
  Tensor out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.dim(0)) {
      throw ContractError("row id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(tv.dim(0)) + " rows");
    }
    std::copy_n(tv.data().data() + ids[i] * width, width, out.data().data() + i * width);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.tape().record(std::move(out), "gather_rows", {table.id()},
                             [table, idv, width](Tape& t, const Tensor& g) {
                               Tensor gt(table.shape());
                               for (std::size_t i = 0; i < idv.size(); ++i)
                                 for (std::size_t d = 0; d < width; ++d)
                                   gt[idv[i] * width + d] += g[i * width + d];
                               t.accumulate(table, std::move(gt));
                             });
}

// ---------------------------------------------------------------------------
// Reductions / normalisation

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), "sum", {a.id()}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(a.shape(), g[0]));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s / n), "mean", {a.id()},
                         [a, n](Tape& t, const Tensor& g) {
                           t.accumulate(a, Tensor(a.shape(), g[0] / n));
                         });
}

Var mean_axis(Var a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < a.shape().size(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const auto& av = a.value();
  const double inv = 1.0 / static_cast<double>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += av[(o * s.len + l) * s.inner + i];
  for (double& v : out.data()) v *= inv;
  return a.tape().record(std::move(out), "mean_axis", {a.id()},
                         [a, s, inv](Tape& t, const Tensor& g) {
                           Tensor ga(a.shape());
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t l = 0; l < s.len; ++l)
                               for (std::size_t i = 0; i < s.inner; ++i)
                                 ga[(o * s.len + l) * s.inner + i] = g[o * s.inner + i] * inv;
                           t.accumulate(a, std::move(ga));
                         });
}

Var softmax(Var a, const std::vector<std::vector<bool>>* mask) {
  const auto& av = a.value();
  const std::size_t width = av.shape().back();
  const std::size_t rows = av.size() / width;
  std::size_t tq = 1;
  if (mask) {
    if (av.rank() < 2) throw ShapeError("masked softmax needs rank >= 2");
    tq = av.shape()[av.rank() - 2];
    if (mask->size() != tq || (tq && (*mask)[0].size() != width)) {
      throw ShapeError("softmax mask does not match the last two axes of " +
                       to_string(av.shape()));
    }
  }
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * width;
    double* y = out.data().data() + r * width;
    const std::vector<bool>* row_mask = mask ? &(*mask)[r % tq] : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j)
      if (!row_mask || (*row_mask)[j]) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx)) throw ContractError("softmax row with every entry masked");
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = (!row_mask || (*row_mask)[j]) ? std::exp(x[j] - mx) : 0.0;
      z += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) y[j] /= z;
  }
  Tensor y = out;
  return a.tape().record(std::move(out), "softmax", {a.id()},
                         [a, width, rows, y](Tape& t, const Tensor& g) {
                           Tensor ga(a.shape());
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* yr = y.data().data() + r * width;
                             const double* gr = g.data().data() + r * width;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < width; ++j) dot += yr[j] * gr[j];
                             double* o = ga.data().data() + r * width;
                             for (std::size_t j = 0; j < width; ++j) o[j] = yr[j] * (gr[j] - dot);
                           }
                           t.accumulate(a, std::move(ga));
                         });
}

Var log_softmax(Var a) {
  const auto& av = a.value();
  const std::size_t width = av.shape().back();
  const std::size_t rows = av.size() / width;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * width;
    const std::size_t arg = std::max_element(x, x + width) - x;
    const double mx = x[arg];
    // log(1 + rest) keeps precision when one logit dominates.
    double rest = 0.0;
    for (std::size_t j = 0; j < width; ++j)
      if (j != arg) rest += std::exp(x[j] - mx);
    const double log_z = std::log1p(rest);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (x[j] - mx) - log_z;
  }
  Tensor probs = out;
  for (double& v : probs.data()) v = std::exp(v);
  return a.tape().record(std::move(out), "log_softmax", {a.id()},
                         [a, width, rows, probs](Tape& t, const Tensor& g) {
                           Tensor ga = g;
                           for (std::size_t r = 0; r < rows; ++r) {
                             double gs = 0.0;
                             for (std::size_t j = 0; j < width; ++j) gs += g[r * width + j];
                             for (std::size_t j = 0; j < width; ++j)
                               ga[r * width + j] -= probs[r * width + j] * gs;
                           }
                           t.accumulate(a, std::move(ga));
                         });
}

Var pick(Var a, std::span<const std::size_t> idx) {
  const auto& av = a.value();
  if (av.rank() != 2 || idx.size() != av.dim(0)) {
    throw ShapeError("pick: need one index per row of " + to_string(av.shape()));
  }
  const std::size_t k = av.dim(1);
  Tensor out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= k) {
      throw ContractError("index " + std::to_string(idx[i]) + " out of range [0, " +
                          std::to_string(k) + ")");
    }
    out[i] = av.at(i, idx[i]);
  }
  std::vector<std::size_t> iv(idx.begin(), idx.end());
  return a.tape().record(std::move(out), "pick", {a.id()}, [a, iv, k](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t i = 0; i < iv.size(); ++i) ga[i * k + iv[i]] = g[i];
    t.accumulate(a, std::move(ga));
  });
}

Var l2_normalize(Var a, double eps) {
  const auto& av = a.value();
  const std::size_t width = av.shape().back();
  const std::size_t rows = av.size() / width;
  Tensor out(av.shape());
  std::vector<double> norms(rows);
  std::vector<bool> clipped(rows, false);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * width;
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += x[j] * x[j];
    double n = std::sqrt(s);
    if (eps == 0.0 && n == 0.0) throw ContractError("l2_normalize of a zero vector");
    if (n < eps) {
      n = eps;
      clipped[r] = true;
    }
    norms[r] = n;
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = x[j] / n;
  }
  Tensor y = out;
  return a.tape().record(std::move(out), "l2_normalize", {a.id()},
                         [a, y, norms, clipped, width, rows](Tape& t, const Tensor& g) {
                           Tensor ga(a.shape());
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* yr = y.data().data() + r * width;
                             const double* gr = g.data().data() + r * width;
                             double* o = ga.data().data() + r * width;
                             const double inv = 1.0 / norms[r];
                             if (clipped[r]) {
                               for (std::size_t j = 0; j < width; ++j) o[j] = gr[j] * inv;
                               continue;
                             }
                             double dot = 0.0;
                             for (std::size_t j = 0; j < width; ++j) dot += yr[j] * gr[j];
                             for (std::size_t j = 0; j < width; ++j)
                               o[j] = (gr[j] - yr[j] * dot) * inv;
                           }
                           t.accumulate(a, std::move(ga));
                         });
}

// ---------------------------------------------------------------------------
// Losses

Var mse(Var pred, Var target) {
  same_shape(pred, target, "mse");
  return mean(square(sub(pred, target)));
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  return neg(mean(pick(log_softmax(logits), targets)));
}

}  // namespace lab::ad

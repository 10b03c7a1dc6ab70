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

#include "ddad/autodiff.hpp"

#include <cmath>

#include "ddad/errors.hpp"
#include "ddad/ops.hpp"

namespace ddad {

const Tensor& Var::value() const {
  if (!tape_) throw InvalidArgument("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& p : parents) {
      if (p.tape() != this) throw InvalidArgument("operands recorded on different tapes");
      if (nodes_[p.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("adjoint shape " + shape_str(g.shape()) + " does not match value shape " +
                     shape_str(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(const Var& output) {
  if (nodes_.empty()) throw InvalidArgument("backward on an empty tape");
  if (output.tape() != this) throw InvalidArgument("backward output belongs to another tape");
  const Node& out = nodes_[output.id()];
  if (out.value.numel() != 1) {
    throw ShapeError("backward requires a scalar output, got shape " +
                     shape_str(out.value.shape()));
  }
  if (!out.requires_grad) {
    throw InvalidArgument("backward output does not depend on any differentiable leaf");
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& seed = nodes_[output.id()];
  seed.grad = Tensor(seed.value.shape(), 1.0);
  seed.has_grad = true;
  visits_ = 0;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, id);
    ++visits_;
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Tensor::zeros(n.value.shape());
  return n.grad;
}

namespace ad {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.tape()) throw InvalidArgument("use of an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw InvalidArgument("operands recorded on different tapes");
  return tape_of(a);
}

Var unary(const Var& a, Tensor value, Tape::BackwardFn fn) {
  const Var ps[] = {a};
  return tape_of(a).push(std::move(value), ps, std::move(fn));
}

Var binary(const Var& a, const Var& b, Tensor value, Tape::BackwardFn fn) {
  const Var ps[] = {a, b};
  return tape_of(a, b).push(std::move(value), ps, std::move(fn));
}

// Elementwise chain rule: adjoint(a) += adjoint(self) * local.
void chain(Tape& tp, const Var& a, std::size_t self, const Tensor& local) {
  tp.accumulate(a.id(), ops::mul(tp.adjoint(self), local));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(a, b, ops::add(a.value(), b.value()), [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (a.requires_grad()) tp.accumulate(a.id(), ops::reduce_to_shape(g, a.shape()));
    if (b.requires_grad()) tp.accumulate(b.id(), ops::reduce_to_shape(g, b.shape()));
  });
}

Var sub(const Var& a, const Var& b) {
  return binary(a, b, ops::sub(a.value(), b.value()), [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (a.requires_grad()) tp.accumulate(a.id(), ops::reduce_to_shape(g, a.shape()));
    if (b.requires_grad())
      tp.accumulate(b.id(), ops::reduce_to_shape(ops::scale(g, -1.0), b.shape()));
  });
}

Var mul(const Var& a, const Var& b) {
  return binary(a, b, ops::mul(a.value(), b.value()), [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (a.requires_grad())
      tp.accumulate(a.id(), ops::reduce_to_shape(ops::mul(g, b.value()), a.shape()));
    if (b.requires_grad())
      tp.accumulate(b.id(), ops::reduce_to_shape(ops::mul(g, a.value()), b.shape()));
  });
}

Var div(const Var& a, const Var& b) {
  return binary(a, b, ops::div(a.value(), b.value()), [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (a.requires_grad())
      tp.accumulate(a.id(), ops::reduce_to_shape(ops::div(g, b.value()), a.shape()));
    if (b.requires_grad()) {
      // d(a/b)/db = -(a/b) / b
      Tensor q = ops::div(ops::mul(g, tp.value(self)), b.value());
      tp.accumulate(b.id(), ops::reduce_to_shape(ops::scale(q, -1.0), b.shape()));
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, ops::scale(a.value(), s), [a, s](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), ops::scale(tp.adjoint(self), s));
  });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, ops::add_scalar(a.value(), s), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), tp.adjoint(self));
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  return binary(a, b, ops::matmul(a.value(), b.value()), [a, b](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (a.requires_grad()) tp.accumulate(a.id(), ops::matmul(g, ops::transpose(b.value())));
    if (b.requires_grad()) tp.accumulate(b.id(), ops::matmul(ops::transpose(a.value()), g));
  });
}

Var transpose(const Var& a) {
  return unary(a, ops::transpose(a.value()), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), ops::transpose(tp.adjoint(self)));
  });
}

Var reshape(const Var& a, Shape shape) {
  return unary(a, a.value().reshaped(std::move(shape)), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), tp.adjoint(self).reshaped(a.shape()));
  });
}

Var sum(const Var& a) {
  return unary(a, ops::sum(a.value()), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), Tensor(a.shape(), tp.adjoint(self)[0]));
  });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  return unary(a, ops::mean(a.value()), [a, inv](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), Tensor(a.shape(), tp.adjoint(self)[0] * inv));
  });
}

Var sum_axis(const Var& a, std::size_t axis) {
  return unary(a, ops::sum_axis(a.value(), axis), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), ops::add(Tensor::zeros(a.shape()), tp.adjoint(self)));
  });
}

Var trace(const Var& a) {
  return unary(a, ops::trace(a.value()), [a](Tape& tp, std::size_t self) {
    Tensor g = Tensor::zeros(a.shape());
    const double s = tp.adjoint(self)[0];
    for (std::size_t i = 0; i < g.dim(0); ++i) g.at(i, i) = s;
    tp.accumulate(a.id(), g);
  });
}

Var exp(const Var& a) {
  return unary(a, ops::exp(a.value()), [a](Tape& tp, std::size_t self) {
    chain(tp, a, self, tp.value(self));
  });
}

Var log(const Var& a) {
  return unary(a, ops::log(a.value()), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), ops::div(tp.adjoint(self), a.value()));
  });
}

Var square(const Var& a) {
  return unary(a, ops::square(a.value()), [a](Tape& tp, std::size_t self) {
    chain(tp, a, self, ops::scale(a.value(), 2.0));
  });
}

Var sqrt(const Var& a) {
  return unary(a, ops::sqrt(a.value()), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id(), ops::div(tp.adjoint(self), ops::scale(tp.value(self), 2.0)));
  });
}

Var relu(const Var& a) {
  return unary(a, ops::relu(a.value()), [a](Tape& tp, std::size_t self) {
    Tensor g = tp.adjoint(self);
    auto x = a.value().data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      if (!(x[i] > 0.0)) gd[i] = 0.0;
    }
    tp.accumulate(a.id(), g);
  });
}

Var sigmoid(const Var& a) {
  return unary(a, ops::sigmoid(a.value()), [a](Tape& tp, std::size_t self) {
    const Tensor& y = tp.value(self);
    Tensor local(y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) local[i] = y[i] * (1.0 - y[i]);
    chain(tp, a, self, local);
  });
}

Var clip(const Var& a, double lo, double hi) {
  return unary(a, ops::clip(a.value(), lo, hi), [a, lo, hi](Tape& tp, std::size_t self) {
    Tensor g = tp.adjoint(self);
    auto x = a.value().data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      if (x[i] < lo || x[i] > hi) gd[i] = 0.0;
    }
    tp.accumulate(a.id(), g);
  });
}

Var maximum(const Var& a, double floor) {
  return unary(a, ops::maximum(a.value(), floor), [a, floor](Tape& tp, std::size_t self) {
    Tensor g = tp.adjoint(self);
    auto x = a.value().data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      if (!(x[i] > floor)) gd[i] = 0.0;
    }
    tp.accumulate(a.id(), g);
  });
}

Var log_softmax(const Var& a) {
  return unary(a, ops::log_softmax(a.value()), [a](Tape& tp, std::size_t self) {
    // dx_ij = g_ij - softmax_ij * sum_k g_ik
    const Tensor& g = tp.adjoint(self);
    const Tensor& y = tp.value(self);
    Tensor dx(y.shape());
    for (std::size_t i = 0; i < y.dim(0); ++i) {
      auto gr = g.row(i);
      auto yr = y.row(i);
      auto dr = dx.row(i);
      double gs = 0.0;
      for (double v : gr) gs += v;
      for (std::size_t j = 0; j < yr.size(); ++j) dr[j] = gr[j] - std::exp(yr[j]) * gs;
    }
    tp.accumulate(a.id(), dx);
  });
}

Var pairwise_sqdist(const Var& x, const Var& z) {
  return binary(x, z, ops::pairwise_sqdist(x.value(), z.value()),
                [x, z](Tape& tp, std::size_t self) {
                  // dD_ij/dx_i = 2 (x_i - z_j), dD_ij/dz_j = -2 (x_i - z_j)
                  const Tensor& g = tp.adjoint(self);
                  const Tensor& xv = x.value();
                  const Tensor& zv = z.value();
                  const std::size_t n = xv.dim(0), m = zv.dim(0), d = xv.dim(1);
                  Tensor gx = Tensor::zeros(xv.shape());
                  Tensor gz = Tensor::zeros(zv.shape());
                  for (std::size_t i = 0; i < n; ++i) {
                    auto xi = xv.row(i);
                    auto gxi = gx.row(i);
                    for (std::size_t j = 0; j < m; ++j) {
                      const double w = 2.0 * g.at(i, j);
                      if (w == 0.0) continue;
                      auto zj = zv.row(j);
                      auto gzj = gz.row(j);
                      for (std::size_t k = 0; k < d; ++k) {
                        const double diff = w * (xi[k] - zj[k]);
                        gxi[k] += diff;
                        gzj[k] -= diff;
                      }
                    }
                  }
                  if (x.requires_grad()) tp.accumulate(x.id(), gx);
                  if (z.requires_grad()) tp.accumulate(z.id(), gz);
                });
}

Var pick(const Var& a, std::span<const int> idx) {
  const Tensor& v = a.value();
  if (v.rank() != 2 || idx.size() != v.dim(0)) {
    throw ShapeError("pick: " + std::to_string(idx.size()) + " indices for shape " +
                     shape_str(v.shape()));
  }
  Tensor out({v.dim(0)});
  std::vector<int> labels(idx.begin(), idx.end());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= v.dim(1)) {
      throw ShapeError("pick: index " + std::to_string(labels[i]) + " out of range for " +
                       shape_str(v.shape()));
    }
    out[i] = v.at(i, static_cast<std::size_t>(labels[i]));
  }
  return unary(a, std::move(out), [a, labels](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    Tensor dx = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < labels.size(); ++i)
      dx.at(i, static_cast<std::size_t>(labels[i])) = g[i];
    tp.accumulate(a.id(), dx);
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  return neg(mean(pick(log_softmax(logits), labels)));
}

}  // namespace ad
}  // namespace ddad

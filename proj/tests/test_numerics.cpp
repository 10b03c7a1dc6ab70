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

#include <doctest.h>

#include <cmath>
#include <functional>

#include "ddad/autodiff.hpp"
#include "ddad/errors.hpp"
#include "ddad/ops.hpp"
#include "ddad/optim.hpp"
#include "ddad/rng.hpp"
#include "ddad/tensor.hpp"
#include "oracles.hpp"

using namespace ddad;

TEST_CASE("tensor shape must match data length") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.row_size() == 3);
  CHECK(shape_numel({4, 1, 8, 8}) == 256);
}

TEST_CASE("forward ops: closed-form cases") {
  Rng rng(1);
  const Tensor a = oracle::random_tensor(rng, {3, 3}, -1, 1);
  CHECK(ops::matmul(Tensor::identity(3), a).bitwise_equal(a));

  const Tensor d = ops::pairwise_sqdist(Tensor::from_rows({{0, 0}}), Tensor::from_rows({{3, 4}}));
  CHECK(d.item() == doctest::Approx(25.0).epsilon(1e-15));

  for (int trial = 0; trial < 20; ++trial) {
    const Tensor v = oracle::random_tensor(rng, {1, 7}, -30, 30);
    CHECK(std::abs(ops::sum(ops::softmax(v)).item() - 1.0) <= 1e-12);
    CHECK(std::abs(ops::sum(ops::exp(ops::log_softmax(v))).item() - 1.0) <= 1e-12);
  }
}

TEST_CASE("broadcasting reduces gradients back to operand shape") {
  CHECK(ops::broadcast_shape({3, 1}, {1, 4}) == Shape{3, 4});
  CHECK_THROWS_AS(ops::broadcast_shape({3, 2}, {4, 2}), ShapeError);
  const Tensor big = Tensor::ones({3, 4});
  CHECK(ops::reduce_to_shape(big, {1, 4})[0] == 3.0);
}

TEST_CASE("non-finite results are errors") {
  CHECK_THROWS_AS(ops::log(Tensor::from_rows({{-1.0}})), NumericError);
  CHECK_THROWS_AS(ops::sqrt(Tensor::from_rows({{-1.0}})), NumericError);
}

TEST_CASE("backward: polynomial and relu") {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  Var y = ad::mul(x, x);
  tape.backward(y);
  CHECK(tape.grad(x).item() == 6.0);

  Tape t2;
  Var r = t2.leaf(Tensor::scalar(-1.0));
  t2.backward(ad::relu(r));
  CHECK(t2.grad(r).item() == 0.0);
  // Subgradient at zero is fixed to 0.
  Tape t3;
  Var z = t3.leaf(Tensor::scalar(0.0));
  t3.backward(ad::relu(z));
  CHECK(t3.grad(z).item() == 0.0);
}

TEST_CASE("backward visits every node once and parents precede children") {
  Tape tape;
  Var a = tape.leaf(Tensor::scalar(2.0));
  Var b = ad::mul(a, a);
  Var c = ad::add(b, a);
  Var d = ad::mul(c, b);
  CHECK(a.id() < b.id());
  CHECK(b.id() < c.id());
  CHECK(c.id() < d.id());
  tape.backward(d);
  // One backward call per interior node; the leaf has none.
  CHECK(tape.last_backward_visits() == tape.size() - 1);
  // d = (a^2 + a) a^2 -> 4a^3 + 3a^2 = 44 at a = 2
  CHECK(tape.grad(a).item() == doctest::Approx(44.0));
}

namespace {

using Unary = std::function<Var(const Var&)>;

// Checks one primitive against central differences at a random point.
void check_primitive(const char* name, const Unary& op, double lo, double hi, Shape shape,
                     Rng& rng) {
  const Tensor x0 = oracle::random_tensor(rng, shape, lo, hi);
  const Tensor w = oracle::random_tensor(rng, op([&] {
                                            static Tape probe(false);
                                            return probe.constant(x0);
                                          }())
                                              .shape(),
                                          -1, 1);
  auto f = [&](const Tensor& x) {
    Tape t(false);
    return ops::sum(ops::mul(op(t.constant(x)).value(), w)).item();
  };
  Tape tape;
  Var x = tape.leaf(x0);
  Var out = ad::sum(ad::mul(op(x), tape.constant(w)));
  tape.backward(out);
  const Tensor g = tape.grad(x);
  const Tensor fd = oracle::central_diff(f, x0, 1e-6);
  INFO(name);
  CHECK(oracle::max_rel_err(g, fd, 1e-3) <= 1e-5);
}

}  // namespace

TEST_CASE("every primitive matches central differences") {
  Rng rng(7);
  Tape holder(false);
  const Tensor other = oracle::random_tensor(rng, {4, 3}, 0.5, 1.5);
  const Tensor mat = oracle::random_tensor(rng, {3, 5}, -1, 1);
  const Tensor rows = oracle::random_tensor(rng, {5, 3}, -1, 1);
  const std::vector<int> labels{0, 2, 1, 0};
  for (int trial = 0; trial < 20; ++trial) {
    check_primitive("add", [&](const Var& v) { return ad::add(v, v.tape()->constant(other)); }, -1, 1, {4, 3}, rng);
    check_primitive("sub", [&](const Var& v) { return ad::sub(v.tape()->constant(other), v); }, -1, 1, {4, 3}, rng);
    check_primitive("mul", [&](const Var& v) { return ad::mul(v, ad::square(v)); }, -1, 1, {4, 3}, rng);
    check_primitive("div", [&](const Var& v) { return ad::div(v.tape()->constant(other), v); }, 0.5, 2, {4, 3}, rng);
    check_primitive("broadcast", [&](const Var& v) { return ad::mul(v, v.tape()->constant(other)); }, -1, 1, {1, 3}, rng);
    check_primitive("matmul", [&](const Var& v) { return ad::matmul(v, v.tape()->constant(mat)); }, -1, 1, {4, 3}, rng);
    check_primitive("transpose", [](const Var& v) { return ad::transpose(v); }, -1, 1, {4, 3}, rng);
    check_primitive("sum_axis", [](const Var& v) { return ad::sum_axis(v, 1); }, -1, 1, {4, 3}, rng);
    check_primitive("mean", [](const Var& v) { return ad::mean(v); }, -1, 1, {4, 3}, rng);
    check_primitive("trace", [](const Var& v) { return ad::trace(v); }, -1, 1, {3, 3}, rng);
    check_primitive("exp", [](const Var& v) { return ad::exp(v); }, -2, 2, {4, 3}, rng);
    check_primitive("log", [](const Var& v) { return ad::log(v); }, 0.5, 3, {4, 3}, rng);
    check_primitive("sqrt", [](const Var& v) { return ad::sqrt(v); }, 0.5, 3, {4, 3}, rng);
    check_primitive("sigmoid", [](const Var& v) { return ad::sigmoid(v); }, -3, 3, {4, 3}, rng);
    check_primitive("relu", [](const Var& v) { return ad::relu(v); }, 0.1, 1, {4, 3}, rng);
    check_primitive("log_softmax", [](const Var& v) { return ad::log_softmax(v); }, -3, 3, {4, 3}, rng);
    check_primitive("pairwise_sqdist", [&](const Var& v) { return ad::pairwise_sqdist(v, v.tape()->constant(rows)); }, -1, 1, {4, 3}, rng);
    check_primitive("pairwise_self", [](const Var& v) { return ad::pairwise_sqdist(v, v); }, -1, 1, {4, 3}, rng);
    check_primitive("cross_entropy", [&](const Var& v) { return ad::cross_entropy(v, labels); }, -3, 3, {4, 3}, rng);
  }
}

TEST_CASE("taped forward equals untaped forward bit for bit") {
  Rng rng(3);
  const Tensor x = oracle::random_tensor(rng, {5, 4}, -1, 1);
  const Tensor w = oracle::random_tensor(rng, {4, 3}, -1, 1);
  auto run = [&](bool record) {
    Tape t(record);
    Var v = t.leaf(x);
    return ad::log_softmax(ad::relu(ad::matmul(v, t.constant(w)))).value();
  };
  CHECK(run(true).bitwise_equal(run(false)));
}

TEST_CASE("finite_diff_grad on simple functions") {
  auto sq = [](const Tensor& t) { return t[0] * t[0]; };
  CHECK(std::abs(finite_diff_grad(sq, Tensor::scalar(3.0), 1e-5)[0] - 6.0) <= 1e-8);
  auto constant = [](const Tensor&) { return 4.0; };
  const Tensor g = finite_diff_grad(constant, Tensor::zeros({3}), 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<Tensor> params{Tensor::from_rows({{1.0, -2.0}})};
  std::vector<Tensor> grads{Tensor::zeros({1, 2})};
  AdamState s = AdamState::for_params(params);
  adam_step(params, grads, s, 0.1);
  CHECK(params[0][0] == 1.0);
  CHECK(params[0][1] == -2.0);
  CHECK(s.step == 1);
}

TEST_CASE("adam: constant gradient converges to steps of size lr") {
  std::vector<Tensor> params{Tensor::scalar(0.0)};
  std::vector<Tensor> grads{Tensor::scalar(0.3)};
  AdamState s = AdamState::for_params(params);
  const double lr = 1e-3;
  double prev = 0.0, delta = 0.0;
  for (int i = 0; i < 2000; ++i) {
    adam_step(params, grads, s, lr);
    CHECK(s.step == static_cast<std::uint64_t>(i + 1));
    delta = params[0][0] - prev;
    prev = params[0][0];
  }
  // Bias-corrected moments make every step lr * g / (|g| + eps) exactly.
  CHECK(std::abs(std::abs(delta) - lr) <= 1e-9);
  CHECK(delta < 0.0);
}

TEST_CASE("adam: identical inputs and cloned state give identical outputs") {
  std::vector<Tensor> a{Tensor::from_rows({{0.5, 0.25}})};
  std::vector<Tensor> g{Tensor::from_rows({{0.1, -0.7}})};
  AdamState sa = AdamState::for_params(a);
  adam_step(a, g, sa, 0.01);
  AdamState sb = sa;
  std::vector<Tensor> a2 = a;
  adam_step(a, g, sa, 0.01);
  adam_step(a2, g, sb, 0.01);
  CHECK(a[0].bitwise_equal(a2[0]));
}

TEST_CASE("adam rejects mismatched gradient shapes") {
  std::vector<Tensor> params{Tensor::zeros({2, 2})};
  std::vector<Tensor> grads{Tensor::zeros({2})};
  AdamState s = AdamState::for_params(params);
  CHECK_THROWS(adam_step(params, grads, s, 0.1));
}

TEST_CASE("rng: determinism and gaussian moments") {
  Rng a(42), b(42);
  CHECK(sample_gaussian(a, {16}, 0, 1).bitwise_equal(sample_gaussian(b, {16}, 0, 1)));

  Rng z(1);
  const Tensor zeros = sample_gaussian(z, {4}, 0.0, 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(zeros[i] == 0.0);

  Rng rng(9);
  const std::size_t n = 100000;
  const Tensor s = sample_gaussian(rng, {n}, 0.0, 0.25);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += s[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (s[i] - mean) * (s[i] - mean);
  const double sd = std::sqrt(var / (n - 1));
  CHECK(std::abs(mean) <= 0.01);
  CHECK(std::abs(sd - 0.25) <= 0.01);
}

TEST_CASE("rng: permutation and sampling are valid") {
  Rng rng(5);
  auto p = rng.permutation(50);
  std::vector<bool> seen(50, false);
  for (auto i : p) seen[i] = true;
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  auto s = rng.sample_without_replacement(50, 10);
  std::sort(s.begin(), s.end());
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

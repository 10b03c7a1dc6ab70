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

#include "ddad/attacks.hpp"
#include "ddad/errors.hpp"
#include "ddad/ops.hpp"
#include "oracles.hpp"

using namespace ddad;

namespace {

struct Fixture {
  ClassifierParams classifier;
  ImageBatch test;
  DetectorModel detector;
  DenoiserParams denoiser;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture fx;
    Rng rng(31);
    const ImageBatch train = synth_digits(rng, 1200, 4, 0.05);
    fx.test = synth_digits(rng, 40, 4, 0.05);
    fx.classifier = train_classifier(train, {20, 1e-3, 64}, rng).params;
    auto feat = std::make_shared<const ClassifierParams>(fx.classifier);
    fx.detector.kernel = init_kernel(train.data, feat);
    fx.detector.batch_size = 40;
    fx.denoiser = init_denoiser(rng, 64);
    return fx;
  }();
  return f;
}

DefenseComponents components() {
  const Fixture& f = fixture();
  return {&f.detector, &f.denoiser, &f.classifier};
}

double cosine(const Tensor& a, const Tensor& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("fgsm: zero budget is the identity, sign step is exact") {
  const Fixture& f = fixture();
  CHECK(fgsm(f.classifier, f.test.data, f.test.labels, 0.0).bitwise_equal(f.test.data));
  const double eps = 0.05;
  const Tensor adv = fgsm(f.classifier, f.test.data, f.test.labels, eps);
  const Tensor g = input_gradient(f.classifier, f.test.data, f.test.labels);
  for (std::size_t i = 0; i < adv.numel(); ++i) {
    const double x = f.test.data[i];
    const double target = x + eps * (g[i] > 0 ? 1.0 : g[i] < 0 ? -1.0 : 0.0);
    if (g[i] != 0.0 && target >= 0.0 && target <= 1.0) {
      CHECK(std::abs(std::abs(adv[i] - x) - eps) <= 1e-15);
    }
  }
}

TEST_CASE("fgsm at 0.2 drops accuracy by at least 30 points") {
  const Fixture& f = fixture();
  const double clean = accuracy(predict(f.classifier, f.test.data), f.test.labels);
  const Tensor adv = fgsm(f.classifier, f.test.data, f.test.labels, 0.2);
  CHECK(clean - accuracy(predict(f.classifier, adv), f.test.labels) >= 0.30);
}

TEST_CASE("pgd with one full step and no random start equals fgsm") {
  const Fixture& f = fixture();
  Rng rng(1);
  const AttackConfig cfg{Norm::kLinf, 0.08, 0.08, 1, 1, false};
  CHECK(pgd(f.classifier, f.test.data, f.test.labels, cfg, rng)
            .bitwise_equal(fgsm(f.classifier, f.test.data, f.test.labels, 0.08)));
}

TEST_CASE("pgd is at least as strong as fgsm") {
  const Fixture& f = fixture();
  Rng rng(2);
  const double eps = 0.1;
  const AttackConfig cfg{Norm::kLinf, eps, 0.01, 40, 1, false};
  const double acc_pgd =
      accuracy(predict(f.classifier, pgd(f.classifier, f.test.data, f.test.labels, cfg, rng)), f.test.labels);
  const double acc_fgsm =
      accuracy(predict(f.classifier, fgsm(f.classifier, f.test.data, f.test.labels, eps)), f.test.labels);
  CHECK(acc_pgd <= acc_fgsm);
}

TEST_CASE("every attack respects the budget and pixel range") {
  const Fixture& f = fixture();
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Norm norm = trial % 2 ? Norm::kL2 : Norm::kLinf;
    AttackConfig cfg;
    cfg.norm = norm;
    cfg.epsilon = rng.uniform(0.01, norm == Norm::kL2 ? 2.0 : 0.3);
    cfg.step = rng.uniform(0.005, 0.5);
    cfg.iterations = 1 + rng.below(5);
    cfg.random_start = rng.below(2) == 1;
    const auto idx = rng.sample_without_replacement(40, 8);
    const ImageBatch part = f.test.subset(idx);
    const Tensor adv = pgd(f.classifier, part.data, part.labels, cfg, rng);
    CHECK(within_budget(adv, part.data, norm, cfg.epsilon));
    if (norm == Norm::kLinf) {
      CHECK(within_budget(fgsm(f.classifier, part.data, part.labels, cfg.epsilon), part.data, norm,
                          cfg.epsilon));
    }
    for (double v : adv.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("attacks are deterministic and never touch labels") {
  const Fixture& f = fixture();
  const std::vector<int> labels = f.test.labels;
  Rng a(4), b(4);
  const AttackConfig cfg{Norm::kL2, 0.5, 0.1, 5, 1, true};
  CHECK(pgd(f.classifier, f.test.data, labels, cfg, a)
            .bitwise_equal(pgd(f.classifier, f.test.data, labels, cfg, b)));
  CHECK(labels == f.test.labels);
}

TEST_CASE("projection: l2 ball and clipping") {
  Rng rng(5);
  const Tensor clean = oracle::random_tensor(rng, {4, 16}, 0.2, 0.8);
  const Tensor far = ops::add(clean, sample_gaussian(rng, {4, 16}, 0.0, 1.0));
  const Tensor p = project(far, clean, Norm::kL2, 0.3);
  CHECK(within_budget(p, clean, Norm::kL2, 0.3));
  CHECK(max_perturbation(p, clean, Norm::kL2) <= 0.3 + 1e-12);
  CHECK(max_perturbation(clean, clean, Norm::kLinf) == 0.0);
}

TEST_CASE("attack configuration is validated") {
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.eot = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  CHECK_THROWS_AS(parse_norm("l3"), InvalidArgument);
  CHECK(parse_norm(norm_name(Norm::kL2)) == Norm::kL2);
}

TEST_CASE("noise injection: identity, mean shift, determinism, no clipping") {
  Rng rng(6);
  const Tensor x = oracle::random_tensor(rng, {100, 1000});
  CHECK(inject_noise(x, {0.0, 0.0}, rng).bitwise_equal(x));
  const Tensor y = inject_noise(x, {0.3, 0.25}, rng);
  const double shift = (ops::sum(y).item() - ops::sum(x).item()) / x.numel();
  CHECK(std::abs(shift - 0.3) <= 4.0 * 0.25 / std::sqrt(static_cast<double>(x.numel())));
  bool out_of_range = false;
  for (double v : y.data()) out_of_range |= v < 0.0 || v > 1.0;
  CHECK(out_of_range);
  Rng a(7), b(7);
  CHECK(inject_noise(x, {0.0, 0.25}, a).bitwise_equal(inject_noise(x, {0.0, 0.25}, b)));
}

TEST_CASE("adaptive replica gradient matches finite differences of its objective") {
  const Fixture& f = fixture();
  const DefenseComponents d = components();
  Rng rng(8);
  const auto idx = rng.sample_without_replacement(40, 6);
  const ImageBatch part = f.test.subset(idx);
  DetectorModel small = f.detector;
  small.batch_size = 6;
  const DefenseComponents ds{&small, d.denoiser, d.classifier};
  const Tensor ref = gather_rows(f.test.data, rng.sample_without_replacement(40, 6));
  const double alpha = 0.5;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor adv = ops::clip(ops::add(part.data, sample_gaussian(rng, part.data.shape(), 0, 0.02)), 0.05, 0.95);
    std::optional<Tensor> noise;
    if (trial % 2) noise = sample_gaussian(rng, adv.shape(), 0.0, 0.02);
    const Tensor g = adaptive_replica_gradient(ds, ref, adv, part.labels, alpha, noise);
    auto objective = [&](const Tensor& a) {
      double ce;
      {
        Tape t(false);
        const ClassifierVars cv = bind_classifier(t, f.classifier, false);
        Var in = t.constant(a);
        if (noise) {
          const DenoiserVars dv = bind_denoiser(t, f.denoiser, false);
          in = denoiser_forward(dv, ad::add(in, t.constant(*noise)));
        }
        ce = ad::cross_entropy(classifier_logits(cv, in), part.labels).value().item();
      }
      return oracle::mmd_deep(small.kernel, ref, a) + alpha * ce;
    };
    CHECK(oracle::grad_err(g, oracle::central_diff(objective, adv, 1e-6)) <= 1e-5);
  }
}

TEST_CASE("EOT gradient is the mean of single-replica gradients") {
  const Fixture& f = fixture();
  const DefenseComponents d = components();
  AdaptiveAttackConfig cfg;
  cfg.attack.eot = 4;
  cfg.noise = {0.0, 0.25};
  cfg.threshold = -std::numeric_limits<double>::infinity();
  cfg.alpha = 0.7;
  Rng rng(9);
  const Tensor ref = f.test.data;
  const Tensor adv = ops::clip(ops::add_scalar(f.test.data, 0.03), 0, 1);
  Rng replay = rng;
  const EotStep step = adaptive_eot_gradient(d, ref, adv, f.test.labels, cfg, rng);
  CHECK_FALSE(step.clean_branch);
  Tensor mean = Tensor::zeros(adv.shape());
  for (int r = 0; r < 4; ++r) {
    const Tensor n = sample_gaussian(replay, adv.shape(), 0.0, 0.25);
    mean = ops::add(mean, adaptive_replica_gradient(d, ref, adv, f.test.labels, cfg.alpha, n));
  }
  mean = ops::scale(mean, 0.25);
  CHECK(oracle::grad_err(step.gradient, mean) <= 1e-12);
}

TEST_CASE("adaptive attack: clean branch with huge alpha follows the classifier gradient") {
  const Fixture& f = fixture();
  AdaptiveAttackConfig cfg;
  cfg.attack.eot = 1;
  cfg.threshold = std::numeric_limits<double>::infinity();
  cfg.alpha = 1e6;
  Rng rng(10);
  const EotStep step = adaptive_eot_gradient(components(), f.test.data, f.test.data, f.test.labels, cfg, rng);
  CHECK(step.clean_branch);
  CHECK(cosine(step.gradient, input_gradient(f.classifier, f.test.data, f.test.labels)) > 0.99);
}

TEST_CASE("adaptive attack output stays in budget and is deterministic") {
  const Fixture& f = fixture();
  AdaptiveAttackConfig cfg;
  cfg.attack = {Norm::kLinf, 0.1, 0.01, 5, 3, false};
  cfg.threshold = 0.0;
  Rng a(11), b(11);
  const Tensor x = adaptive_pgd_eot(components(), f.test.data, f.test.labels, cfg, a);
  CHECK(within_budget(x, f.test.data, Norm::kLinf, 0.1));
  for (double v : x.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(x.bitwise_equal(adaptive_pgd_eot(components(), f.test.data, f.test.labels, cfg, b)));
  cfg.attack.norm = Norm::kL2;
  cfg.attack.epsilon = 0.5;
  cfg.attack.random_start = true;
  const Tensor y = adaptive_pgd_eot(components(), f.test.data, f.test.labels, cfg, a);
  CHECK(within_budget(y, f.test.data, Norm::kL2, 0.5));
}

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

#include "ddad/discrepancy.hpp"
#include "ddad/errors.hpp"
#include "ddad/ops.hpp"
#include "oracles.hpp"

using namespace ddad;

namespace {

DeepKernelParams random_kernel(Rng& rng, std::shared_ptr<const ClassifierParams> feat = nullptr) {
  DeepKernelParams k;
  k.raw_beta0 = rng.uniform(-3, 3);
  k.raw_sigma_q = rng.uniform(-0.5, 1.5);
  k.raw_sigma_phi = rng.uniform(-0.5, 1.5);
  k.featurizer = std::move(feat);
  return k;
}

}  // namespace

TEST_CASE("gaussian kernel closed forms and brute force") {
  const Tensor x = Tensor::from_rows({{0.0, 0.0}});
  CHECK(gaussian_kernel(x, x, 0.7).item() == 1.0);
  const double s = 0.8;
  const Tensor z = Tensor::from_rows({{s * std::sqrt(2.0), 0.0}});
  CHECK(std::abs(gaussian_kernel(x, z, s).item() - std::exp(-1.0)) <= 1e-12);

  Rng rng(1);
  const Tensor a = oracle::random_tensor(rng, {6, 64});
  const Tensor b = oracle::random_tensor(rng, {5, 64});
  const Tensor g = gaussian_kernel(a, b, 1.3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(std::abs(g.at(i, j) - oracle::gauss(oracle::sqdist(a, i, b, j), 1.3)) <= 1e-14);
}

TEST_CASE("deep kernel: unit diagonal, beta0 limit, brute-force composition") {
  Rng rng(2);
  auto feat = std::make_shared<const ClassifierParams>(init_classifier(rng, 64, 4));
  for (int trial = 0; trial < 10; ++trial) {
    const DeepKernelParams k = random_kernel(rng, feat);
    CHECK(k.beta0() > 0.0);
    CHECK(k.beta0() < 1.0);
    CHECK(k.sigma_q() > 0.0);
    const Tensor x = oracle::random_tensor(rng, {7, 64});
    const Tensor kxx = deep_kernel(k, x, x);
    for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(kxx.at(i, i) - 1.0) <= 1e-15);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(kxx.at(i, j) == kxx.at(j, i));
        CHECK((kxx.at(i, j) > 0.0 && kxx.at(i, j) <= 1.0));
      }
    const Tensor z = oracle::random_tensor(rng, {7, 64});
    CHECK(oracle::max_rel_err(deep_kernel(k, x, z), oracle::deep_gram(k, x, z), 1e-300) <= 1e-13);
  }
  // Extreme raw values still map inside the constraints.
  DeepKernelParams wild;
  wild.raw_beta0 = -700;
  wild.raw_sigma_q = -50;
  wild.raw_sigma_phi = 50;
  CHECK(wild.beta0() >= 0.0);
  CHECK(wild.sigma_q() > 0.0);

  DeepKernelParams limit = random_kernel(rng, feat);
  limit.raw_beta0 = 40.0;
  const Tensor x = oracle::random_tensor(rng, {5, 64});
  const Tensor z = oracle::random_tensor(rng, {5, 64});
  CHECK(oracle::max_rel_err(deep_kernel(limit, x, z), gaussian_kernel(x, z, limit.sigma_q()),
                            1e-300) <= 1e-12);
}

TEST_CASE("mmd: hand-computed linear-kernel case") {
  // k(a, b) = ab with X = (0, 2), Z = (1, 1)
  const Tensor kxx = Tensor::from_rows({{0, 0}, {0, 4}});
  const Tensor kzz = Tensor::from_rows({{1, 1}, {1, 1}});
  const Tensor kxz = Tensor::from_rows({{0, 0}, {2, 2}});
  CHECK(mmd_u_squared_gram(kxx, kzz, kxz) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(oracle::mmd_nested(oracle::h_of(kxx, kzz, kxz)) == doctest::Approx(-1.0));
}

TEST_CASE("mmd: identical paired batches give exactly zero") {
  Rng rng(3);
  const DeepKernelParams k = random_kernel(rng);
  const Tensor x = oracle::random_tensor(rng, {12, 10});
  CHECK(mmd_u_squared(k, x, x) == 0.0);
  CHECK(j_hat(k, x, x, 1e-8) == 0.0);
  DetectorModel det;
  det.kernel = k;
  det.batch_size = 12;
  CHECK(mmd_opt(det, x, x) == 0.0);
}

TEST_CASE("mmd, h matrix and variance match nested-loop transcriptions") {
  Rng rng(4);
  auto feat = std::make_shared<const ClassifierParams>(init_classifier(rng, 16, 3));
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.below(31);
    const DeepKernelParams k = random_kernel(rng, trial % 2 ? feat : nullptr);
    const Tensor x = oracle::random_tensor(rng, {n, 16});
    const Tensor z = oracle::random_tensor(rng, {n, 16});
    const Tensor kxx = deep_kernel(k, x, x), kzz = deep_kernel(k, z, z), kxz = deep_kernel(k, x, z);
    const Tensor h = h_matrix(kxx, kzz, kxz);
    const Tensor ho = oracle::h_of(kxx, kzz, kxz);
    CHECK(oracle::max_rel_err(h, ho, 1e-300) <= 1e-15);
    CHECK(oracle::rel_err(mmd_u_squared(k, x, z), oracle::mmd_deep(k, x, z)) <= 1e-12);
    CHECK(oracle::rel_err(variance_hat(h, 1e-8), oracle::variance_nested(ho, 1e-8)) <= 1e-12);
    CHECK(oracle::rel_err(j_hat(k, x, z, 1e-8), oracle::j_deep(k, x, z, 1e-8)) <= 1e-12);
  }
}

TEST_CASE("variance: closed-form matrices") {
  CHECK(variance_hat(Tensor::zeros({5, 5}), 1e-3) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(variance_hat(Tensor::ones({4, 4}), 1e-3) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK_THROWS_AS(variance_hat(Tensor::ones({4, 4}), 0.0), InvalidArgument);
  // Cancellation below the floor is clamped, never negative.
  CHECK(variance_hat(Tensor::zeros({3, 3}), 1e-8) >= 1e-11);
}

TEST_CASE("mmd: symmetry and permutation invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const DeepKernelParams k = random_kernel(rng);
    const Tensor x = oracle::random_tensor(rng, {10, 6});
    const Tensor z = oracle::random_tensor(rng, {10, 6}, 0.2, 1.2);
    const double a = mmd_u_squared(k, x, z);
    CHECK(oracle::close_err(a, mmd_u_squared(k, z, x)) <= 1e-12);
    // The estimator pairs row i of x with row i of z, so rows move together.
    const auto px = rng.permutation(10);
    CHECK(oracle::close_err(a, mmd_u_squared(k, gather_rows(x, px), gather_rows(z, px))) <= 1e-12);
  }
}

TEST_CASE("mmd: unbiased under the null") {
  Rng rng(6);
  const DeepKernelParams k = DeepKernelParams::from_values(0.5, 1.0, 1.0, nullptr);
  const int draws = 2000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const Tensor x = sample_gaussian(rng, {10, 2}, 0.0, 1.0);
    const Tensor z = sample_gaussian(rng, {10, 2}, 0.0, 1.0);
    const double s = mmd_u_squared(k, x, z);
    sum += s;
    sumsq += s * s;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sumsq / draws - mean * mean) / draws);
  CHECK(std::abs(mean) <= 3.0 * se);
}

TEST_CASE("gradient of the power objective matches finite differences") {
  Rng rng(7);
  auto feat = std::make_shared<const ClassifierParams>(init_classifier(rng, 12, 3));
  const double lambda = 1e-8;
  for (int trial = 0; trial < 20; ++trial) {
    const DeepKernelParams k0 = random_kernel(rng, trial % 2 ? feat : nullptr);
    const Tensor x = oracle::random_tensor(rng, {8, 12});
    const Tensor z = oracle::random_tensor(rng, {8, 12}, 0.1, 1.1);

    Tape tape;
    const KernelVars kv = bind_kernel(tape, k0, true);
    Var zv = tape.leaf(z);
    const PowerTerms pt = j_hat(kv, embed(kv, tape.constant(x)), embed(kv, zv), lambda);
    tape.backward(pt.j);

    const Tensor raw = Tensor({3}, std::vector<double>{k0.raw_beta0, k0.raw_sigma_q, k0.raw_sigma_phi});
    auto f_raw = [&](const Tensor& r) {
      DeepKernelParams k = k0;
      k.raw_beta0 = r[0];
      k.raw_sigma_q = r[1];
      k.raw_sigma_phi = r[2];
      return oracle::j_deep(k, x, z, lambda);
    };
    const Tensor fd = oracle::central_diff(f_raw, raw, 1e-6);
    const Tensor ad_grad({3}, std::vector<double>{tape.grad(kv.raw_beta0).item(),
                                                  tape.grad(kv.raw_sigma_q).item(),
                                                  tape.grad(kv.raw_sigma_phi).item()});
    INFO(trial, " ", ad_grad[0], " ", fd[0], " ", ad_grad[1], " ", fd[1], " ", ad_grad[2], " ", fd[2]);
    CHECK(oracle::grad_err(ad_grad, fd) <= 1e-5);

    auto f_in = [&](const Tensor& zz) { return oracle::j_deep(k0, x, zz, lambda); };
    CHECK(oracle::grad_err(tape.grad(zv), oracle::central_diff(f_in, z, 1e-6)) <= 1e-5);
  }
}

TEST_CASE("mmd_opt enforces the batch size") {
  Rng rng(8);
  DetectorModel det;
  det.kernel = random_kernel(rng);
  det.batch_size = 10;
  const Tensor x = oracle::random_tensor(rng, {10, 4});
  CHECK_THROWS_AS(mmd_opt(det, x, oracle::random_tensor(rng, {6, 4})), InvalidArgument);
  // Larger batches are subsampled to B deterministically.
  const Tensor big = oracle::random_tensor(rng, {25, 4});
  CHECK(mmd_opt(det, x, big) == mmd_opt(det, x, big));
}

TEST_CASE("calibration: singleton trial and quantile") {
  Rng rng(9);
  const DeepKernelParams k = DeepKernelParams::from_values(0.5, 1.0, 1.0, nullptr);
  const Tensor pool = sample_gaussian(rng, {200, 2}, 0, 1);
  const CalibrationResult one = calibrate_threshold(k, pool, 20, 0.05, 1, rng);
  CHECK(one.threshold == one.statistics[0]);
  const CalibrationResult many = calibrate_threshold(k, pool, 20, 0.05, 100, rng);
  std::size_t above = 0;
  for (double s : many.statistics) above += s > many.threshold;
  CHECK(above <= 5);
  const Tensor ref = gather_rows(pool, rng.sample_without_replacement(200, 20));
  CHECK_NOTHROW(calibrate_threshold(k, pool, 20, 0.05, 10, rng, &ref));
  CHECK_THROWS_AS(calibrate_threshold(k, pool, 20, 0.05, 0, rng), InvalidArgument);
  CHECK_THROWS_AS(calibrate_threshold(k, pool, 1, 0.05, 10, rng), InvalidArgument);
  CHECK_THROWS_AS(calibrate_threshold(k, pool, 19, 0.05, 10, rng, &ref), ShapeError);
}

TEST_CASE("calibrated false alarm rate holds on fresh batches") {
  Rng rng(10);
  const DeepKernelParams k = DeepKernelParams::from_values(0.5, 1.5, 1.5, nullptr);
  const Tensor pool = sample_gaussian(rng, {600, 2}, 0, 1);
  const std::size_t trials = 400;
  const CalibrationResult cal = calibrate_threshold(k, pool, 50, 0.05, trials, rng);
  const std::size_t fresh = 400;
  std::size_t alarms = 0;
  for (std::size_t t = 0; t < fresh; ++t) {
    const Tensor a = sample_gaussian(rng, {50, 2}, 0, 1);
    const Tensor b = sample_gaussian(rng, {50, 2}, 0, 1);
    alarms += !rules_clean(mmd_u_squared(k, a, b), cal.threshold);
  }
  const double slack = 2.0 * std::sqrt(0.05 * 0.95 / trials) + 2.0 * std::sqrt(0.05 * 0.95 / fresh);
  CHECK(static_cast<double>(alarms) / fresh <= 0.05 + slack);
}

TEST_CASE("kernel optimization raises power on separated blobs and keeps the featurizer") {
  Rng rng(11);
  const BlobPair blobs = synth_blobs(rng, 300, 2, 3.0);
  KernelTrainConfig cfg;
  cfg.epochs = 20;
  cfg.lr = 2e-2;
  cfg.batch_size = 50;
  const KernelTrainResult r = optimize_kernel(blobs.class0, blobs.class1, nullptr, cfg, rng);
  CHECK(r.best_monitor_j > r.initial_monitor_j);
  CHECK(r.monitor_trajectory.size() == cfg.epochs);

  Rng drng(12);
  const ImageBatch digits = synth_digits(drng, 300, 4, 0.1);
  auto feat = std::make_shared<const ClassifierParams>(init_classifier(drng, 64, 4));
  const ClassifierParams before = *feat;
  Tensor shifted = ops::clip(ops::add_scalar(digits.data, 0.05), 0, 1);
  cfg.epochs = 2;
  optimize_kernel(digits.data, shifted, feat, cfg, drng);
  CHECK(feat->bitwise_equal(before));
}

TEST_CASE("detector container round trip") {
  Rng rng(13);
  auto feat = std::make_shared<const ClassifierParams>(init_classifier(rng, 64, 4));
  DetectorModel det;
  det.kernel = random_kernel(rng, feat);
  det.threshold = 0.5;
  det.lambda = 1e-8;
  det.batch_size = 40;
  det.calibration = {0.05, 0.045, 200};
  ModelContainer c;
  store_detector(c, det);
  const DetectorModel back = load_detector(decode_container(encode_container(c)), feat);
  CHECK(back.threshold == 0.5);
  CHECK(back.batch_size == 40);
  CHECK(back.kernel.raw_beta0 == det.kernel.raw_beta0);
  CHECK(back.kernel.raw_sigma_phi == det.kernel.raw_sigma_phi);
  CHECK(back.calibration.trials == 200);
  const Tensor x = oracle::random_tensor(rng, {40, 64});
  const Tensor z = oracle::random_tensor(rng, {40, 64});
  CHECK(mmd_opt(back, x, z) == mmd_opt(det, x, z));
}

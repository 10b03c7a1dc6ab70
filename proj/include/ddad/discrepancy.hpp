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

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "ddad/autodiff.hpp"
#include "ddad/dataio.hpp"
#include "ddad/models.hpp"
#include "ddad/rng.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

/// Trainable state of the deep kernel
///
///   k(x, z) = [(1 - beta0) s(x, z) + beta0] q(x, z)
///
/// where q is a Gaussian kernel on flattened inputs with bandwidth sigma_q and
/// s is a Gaussian kernel on penultimate classifier features with bandwidth
/// sigma_phi. The raw scalars are unconstrained: beta0 = logistic(raw_beta0),
/// sigma = exp(raw_sigma). A null featurizer means identity features.
struct DeepKernelParams {
  double raw_beta0 = 0.0;
  double raw_sigma_q = 0.0;
  double raw_sigma_phi = 0.0;
  std::shared_ptr<const ClassifierParams> featurizer;

  double beta0() const;
  double sigma_q() const;
  double sigma_phi() const;

  static DeepKernelParams from_values(double beta0, double sigma_q, double sigma_phi,
                                      std::shared_ptr<const ClassifierParams> featurizer);
};

/// Gaussian kernel exp(-||x - z||^2 / (2 sigma^2)) between rows of X and Z.
Tensor gaussian_kernel(const Tensor& x, const Tensor& z, double sigma);
/// Gram matrix of the deep kernel between the rows of X and Z.
Tensor deep_kernel(const DeepKernelParams& k, const Tensor& x, const Tensor& z);

/// H_ij = Kxx_ij + Kzz_ij - Kxz_ij - Kxz_ji
Tensor h_matrix(const Tensor& kxx, const Tensor& kzz, const Tensor& kxz);
/// Unbiased MMD^2: sum of off-diagonal H over n(n-1). May be negative.
double mmd_u_squared_gram(const Tensor& kxx, const Tensor& kzz, const Tensor& kxz);
double mmd_u_squared(const DeepKernelParams& k, const Tensor& x, const Tensor& z);
/// Regularized variance 4/n^3 sum_i (sum_j H_ij)^2 - 4/n^4 (sum_ij H_ij)^2 + lambda,
/// floored at lambda * 1e-3.
double variance_hat(const Tensor& h, double lambda);
/// Test-power proxy MMD^2_u / sqrt(variance_hat).
double j_hat(const DeepKernelParams& k, const Tensor& clean, const Tensor& adv, double lambda);

inline constexpr double kVarianceFloorFactor = 1e-3;

// --- Differentiable forms --------------------------------------------------

struct KernelVars {
  Var raw_beta0;
  Var raw_sigma_q;
  Var raw_sigma_phi;
  std::optional<ClassifierVars> featurizer;
};

KernelVars bind_kernel(Tape& tape, const DeepKernelParams& k, bool trainable_scalars,
                       bool trainable_featurizer = false);

/// Inputs prepared for the kernel: flattened pixels and features.
struct Embedding {
  Var flat;
  Var feat;
};

Embedding embed(const KernelVars& k, const Var& x);
/// Embedding with precomputed (constant) features.
Embedding embed_constant(Tape& tape, const Tensor& flat, const Tensor& feat);

Var gaussian_gram(const Var& sqdist, const Var& sigma);
Var deep_kernel_gram(const KernelVars& k, const Embedding& a, const Embedding& b);
Var h_matrix(const Var& kxx, const Var& kzz, const Var& kxz);
Var mmd_from_h(const Var& h);
Var variance_from_h(const Var& h, double lambda);
/// H for the paired batches; both must hold the same number of rows n >= 2.
Var h_matrix(const KernelVars& k, const Embedding& x, const Embedding& z);
Var mmd_u_squared(const KernelVars& k, const Embedding& x, const Embedding& z);

struct PowerTerms {
  Var mmd;
  Var variance;
  Var j;
};

PowerTerms j_hat(const KernelVars& k, const Embedding& clean, const Embedding& adv,
                 double lambda);

// --- Detector --------------------------------------------------------------

struct CalibrationReport {
  double far_target = 0.05;
  /// Fraction of calibration statistics ruled Adversarial at the chosen t.
  double far_estimate = 0.0;
  std::size_t trials = 0;
};

struct DetectorModel {
  DeepKernelParams kernel;
  double threshold = 0.0;
  double lambda = 1e-8;
  std::size_t batch_size = 100;
  CalibrationReport calibration;
  std::uint64_t subsample_seed = 0;
  /// The kernel carries its own trained featurizer copy rather than sharing
  /// the frozen classifier.
  bool owns_featurizer = false;
};

/// Gate predicate shared by the defense and the adaptive attack. A statistic
/// equal to the threshold is ruled clean.
inline bool rules_clean(double statistic, double threshold) { return statistic <= threshold; }

/// MMD^2_u under the optimized kernel. Oversized batches are uniformly
/// subsampled to the recorded batch size with a generator seeded from the
/// model, so the result is a pure function of its arguments.
double mmd_opt(const DetectorModel& model, const Tensor& x, const Tensor& z);

// --- Kernel optimization ---------------------------------------------------

struct KernelTrainConfig {
  std::size_t epochs = 200;
  double lr = 2e-4;
  std::size_t batch_size = 100;
  double lambda = 1e-8;
  /// Fraction of each pool held out to monitor J on unseen batches.
  double monitor_fraction = 0.2;
  /// Also train a private copy of the featurizer weights.
  bool train_featurizer = false;
};

struct KernelTrainResult {
  DeepKernelParams kernel;
  double initial_monitor_j = 0.0;
  /// Monitoring J after each epoch.
  std::vector<double> monitor_trajectory;
  /// Mean training-minibatch J within each epoch.
  std::vector<double> train_trajectory;
  double best_monitor_j = 0.0;
  /// 0 when the initialization was never beaten.
  std::size_t best_epoch = 0;
};

/// Median-heuristic bandwidths on a clean batch, beta0 = 0.5.
DeepKernelParams init_kernel(const Tensor& clean, std::shared_ptr<const ClassifierParams> featurizer);

/// Ascends J over minibatch pairs with Adam; returns the kernel with the best
/// monitoring J.
KernelTrainResult optimize_kernel(const Tensor& clean, const Tensor& adv,
                                  std::shared_ptr<const ClassifierParams> featurizer,
                                  const KernelTrainConfig& cfg, Rng& rng);

struct CalibrationResult {
  double threshold = 0.0;
  CalibrationReport report;
  std::vector<double> statistics;
};

/// t = empirical (1 - far) quantile of MMD^2_u between disjoint clean batches
/// of size `batch_size`, redrawn `trials` times from `pool`. With a fixed
/// `reference` batch (the deployed S_V) only the second batch is redrawn, so
/// the quantile is the one the gate actually sees.
CalibrationResult calibrate_threshold(const DeepKernelParams& kernel, const Tensor& pool,
                                      std::size_t batch_size, double far, std::size_t trials,
                                      Rng& rng, const Tensor* reference = nullptr);

/// Names kernel.raw_beta0, kernel.raw_sigma_q, kernel.raw_sigma_phi; metadata
/// threshold, batch_size, lambda, far_target and calibration fields.
void store_detector(ModelContainer& c, const DetectorModel& m);
DetectorModel load_detector(const ModelContainer& c,
                            std::shared_ptr<const ClassifierParams> classifier);

}  // namespace ddad

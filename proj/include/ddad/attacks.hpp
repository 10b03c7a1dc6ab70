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
#include <limits>
#include <optional>
#include <span>
#include <string>

#include "ddad/discrepancy.hpp"
#include "ddad/models.hpp"
#include "ddad/rng.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

enum class Norm { kLinf, kL2 };

Norm parse_norm(const std::string& s);
std::string norm_name(Norm n);

struct AttackConfig {
  Norm norm = Norm::kLinf;
  double epsilon = 0.1;
  double step = 0.01;
  std::size_t iterations = 40;
  /// EOT replicas; only the adaptive attack uses them.
  std::size_t eot = 1;
  bool random_start = true;

  void validate() const;
};

struct NoiseConfig {
  double mu = 0.0;
  double sigma = 0.25;
};

/// Gradient of mean cross-entropy w.r.t. the input batch (same shape).
Tensor input_gradient(const ClassifierParams& classifier, const Tensor& batch,
                      std::span<const int> labels);

/// x + eps * sign(grad CE), clipped to [0, 1].
Tensor fgsm(const ClassifierParams& classifier, const Tensor& batch, std::span<const int> labels,
            double epsilon);

/// Iterated ascent on cross-entropy with projection onto the eps-ball and [0, 1].
/// The l2 variant steps along the per-sample normalized gradient.
Tensor pgd(const ClassifierParams& classifier, const Tensor& batch, std::span<const int> labels,
           const AttackConfig& cfg, Rng& rng);

/// batch + N(mu, sigma^2), deliberately not clipped.
Tensor inject_noise(const Tensor& batch, const NoiseConfig& noise, Rng& rng);

/// Projects `adv` onto the eps-ball around `clean` (per sample) and [0, 1].
Tensor project(const Tensor& adv, const Tensor& clean, Norm norm, double epsilon);
/// Largest per-sample perturbation norm.
double max_perturbation(const Tensor& adv, const Tensor& clean, Norm norm);
bool within_budget(const Tensor& adv, const Tensor& clean, Norm norm, double epsilon,
                   double tol = 1e-9);

// --- Adaptive white-box attack ---------------------------------------------

/// Every defense component the adaptive attacker differentiates through.
struct DefenseComponents {
  const DetectorModel* detector = nullptr;
  const DenoiserParams* denoiser = nullptr;
  const ClassifierParams* classifier = nullptr;

  void validate() const;
};

struct AdaptiveAttackConfig {
  AttackConfig attack;
  NoiseConfig noise;
  /// Branch threshold, shared with the defense gate.
  double threshold = 0.05;
  double alpha = 1e-2;
};

/// Gradient of one EOT replica w.r.t. the adversarial batch:
///   clean branch:       grad [MMD(ref, S_A) + alpha CE(h(S_A), y)]
///   adversarial branch: grad [MMD(ref, S_A) + alpha CE(h(g(S_A + n)), y)]
/// `noise` selects the adversarial branch.
Tensor adaptive_replica_gradient(const DefenseComponents& d, const Tensor& reference,
                                 const Tensor& adv, std::span<const int> labels, double alpha,
                                 const std::optional<Tensor>& noise);

struct EotStep {
  Tensor gradient;  // averaged over replicas
  double statistic = 0.0;
  bool clean_branch = true;
};

/// Evaluates the branch statistic once, then averages K replica gradients,
/// drawing fresh noise per replica on the adversarial branch.
EotStep adaptive_eot_gradient(const DefenseComponents& d, const Tensor& reference,
                              const Tensor& adv, std::span<const int> labels,
                              const AdaptiveAttackConfig& cfg, Rng& rng);

/// PGD+EOT against the whole defense. `reference` is the batch the MMD term is
/// measured against; pass nullopt to use the attacker's clean batch itself.
Tensor adaptive_pgd_eot(const DefenseComponents& d, const Tensor& clean,
                        std::span<const int> labels, const AdaptiveAttackConfig& cfg, Rng& rng,
                        const std::optional<Tensor>& reference = std::nullopt);

}  // namespace ddad

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

#include "ddad/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "ddad/autodiff.hpp"
#include "ddad/errors.hpp"
#include "ddad/ops.hpp"

namespace ddad {

Norm parse_norm(const std::string& s) {
  if (s == "linf" || s == "l_inf") return Norm::kLinf;
  if (s == "l2") return Norm::kL2;
  throw InvalidArgument("unknown norm '" + s + "' (expected linf or l2)");
}

std::string norm_name(Norm n) { return n == Norm::kLinf ? "linf" : "l2"; }

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidArgument("attack epsilon must be positive");
  if (!(step > 0.0)) throw InvalidArgument("attack step size must be positive");
  if (iterations < 1) throw InvalidArgument("attack needs at least one iteration");
  if (eot < 1) throw InvalidArgument("attack needs at least one EOT replica");
}

namespace {

void check_labels(const Tensor& batch, std::span<const int> labels) {
  if (labels.size() != batch.rows()) {
    throw ShapeError("attack: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch.rows()) + " samples");
  }
}

std::vector<double> row_norms(const Tensor& t) {
  std::vector<double> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v * v;
    out[i] = std::sqrt(s);
  }
  return out;
}

// Ascent direction for one step: sign for l_inf, unit-l2 rows for l2.
Tensor step_direction(const Tensor& grad, Norm norm) {
  if (norm == Norm::kLinf) return ops::sign(grad);
  Tensor d = grad;
  const auto norms = row_norms(grad);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    auto r = d.row(i);
    if (norms[i] == 0.0) continue;
    for (double& v : r) v /= norms[i];
  }
  return d;
}

Tensor random_start(const Tensor& clean, Norm norm, double eps, Rng& rng) {
  if (norm == Norm::kLinf) {
    return ops::add(clean, sample_uniform(rng, clean.shape(), -eps, eps));
  }
  // Uniform in the l2 ball: gaussian direction, radius eps * u^(1/d).
  Tensor delta = sample_gaussian(rng, clean.shape(), 0.0, 1.0);
  const auto norms = row_norms(delta);
  const double d = static_cast<double>(clean.row_size());
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    const double radius = eps * std::pow(rng.uniform(), 1.0 / d);
    for (double& v : delta.row(i)) v *= norms[i] > 0.0 ? radius / norms[i] : 0.0;
  }
  return ops::add(clean, delta);
}

}  // namespace

Tensor input_gradient(const ClassifierParams& classifier, const Tensor& batch,
                      std::span<const int> labels) {
  check_labels(batch, labels);
  Tape tape;
  const ClassifierVars v = bind_classifier(tape, classifier, false);
  const Var x = tape.leaf(batch);
  tape.backward(ad::cross_entropy(classifier_logits(v, x), labels));
  return tape.grad(x);
}

Tensor project(const Tensor& adv, const Tensor& clean, Norm norm, double epsilon) {
  if (adv.shape() != clean.shape()) {
    throw ShapeError("project: " + shape_str(adv.shape()) + " vs " + shape_str(clean.shape()));
  }
  Tensor out = adv;
  if (norm == Norm::kLinf) {
    for (std::size_t i = 0; i < out.numel(); ++i)
      out[i] = std::clamp(out[i], clean[i] - epsilon, clean[i] + epsilon);
  } else {
    Tensor delta = ops::sub(adv, clean);
    const auto norms = row_norms(delta);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      if (norms[i] <= epsilon) continue;
      const double s = epsilon / norms[i];
      auto o = out.row(i);
      auto c = clean.row(i);
      auto dr = delta.row(i);
      for (std::size_t k = 0; k < o.size(); ++k) o[k] = c[k] + dr[k] * s;
    }
  }
  // Clipping moves toward clean (which lies in the box), so the ball still holds.
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double max_perturbation(const Tensor& adv, const Tensor& clean, Norm norm) {
  const Tensor delta = ops::sub(adv, clean);
  double worst = 0.0;
  if (norm == Norm::kLinf) {
    for (double v : delta.data()) worst = std::max(worst, std::abs(v));
  } else {
    for (double n : row_norms(delta)) worst = std::max(worst, n);
  }
  return worst;
}

bool within_budget(const Tensor& adv, const Tensor& clean, Norm norm, double epsilon,
                   double tol) {
  if (max_perturbation(adv, clean, norm) > epsilon + tol) return false;
  for (double v : adv.data()) {
    if (v < 0.0 || v > 1.0) return false;
  }
  return true;
}

Tensor fgsm(const ClassifierParams& classifier, const Tensor& batch, std::span<const int> labels,
            double epsilon) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("fgsm: epsilon must be non-negative");
  if (epsilon == 0.0) return batch;
  const Tensor g = input_gradient(classifier, batch, labels);
  return ops::clip(ops::add(batch, ops::scale(ops::sign(g), epsilon)), 0.0, 1.0);
}

Tensor pgd(const ClassifierParams& classifier, const Tensor& batch, std::span<const int> labels,
           const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  check_labels(batch, labels);
  Tensor adv = batch;
  if (cfg.random_start) {
    adv = project(random_start(batch, cfg.norm, cfg.epsilon, rng), batch, cfg.norm, cfg.epsilon);
  }
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Tensor g = input_gradient(classifier, adv, labels);
    adv = ops::add(adv, ops::scale(step_direction(g, cfg.norm), cfg.step));
    adv = project(adv, batch, cfg.norm, cfg.epsilon);
  }
  return adv;
}

Tensor inject_noise(const Tensor& batch, const NoiseConfig& noise, Rng& rng) {
  if (!(noise.sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
  if (noise.sigma == 0.0 && noise.mu == 0.0) return batch;
  return ops::add(batch, sample_gaussian(rng, batch.shape(), noise.mu, noise.sigma));
}

// --- Adaptive ----------------------------------------------------------------

void DefenseComponents::validate() const {
  if (!detector) throw InvalidArgument("adaptive attack: detector missing");
  if (!denoiser) throw InvalidArgument("adaptive attack: denoiser missing");
  if (!classifier) throw InvalidArgument("adaptive attack: classifier missing");
}

namespace {

// Gradient of MMD(reference, adv) w.r.t. adv, plus the statistic itself.
Tensor mmd_input_gradient(const DetectorModel& det, const Tensor& reference, const Tensor& adv,
                          double* statistic) {
  Tape tape;
  const KernelVars kv = bind_kernel(tape, det.kernel, false);
  const Var x = tape.leaf(adv);
  const Embedding ref = embed(kv, tape.constant(reference));
  const Var mmd = mmd_u_squared(kv, ref, embed(kv, x));
  if (statistic) *statistic = mmd.value().item();
  tape.backward(mmd);
  return tape.grad(x);
}

// Gradient of CE(h(S_A), y) or CE(h(g(S_A + n)), y) w.r.t. S_A.
Tensor ce_branch_gradient(const DefenseComponents& d, const Tensor& adv,
                          std::span<const int> labels, const std::optional<Tensor>& noise) {
  Tape tape;
  const ClassifierVars cv = bind_classifier(tape, *d.classifier, false);
  const Var x = tape.leaf(adv);
  Var input = x;
  if (noise) {
    const DenoiserVars dv = bind_denoiser(tape, *d.denoiser, false);
    input = denoiser_forward(dv, ad::add(x, tape.constant(*noise)));
  }
  tape.backward(ad::cross_entropy(classifier_logits(cv, input), labels));
  return tape.grad(x);
}

}  // namespace

Tensor adaptive_replica_gradient(const DefenseComponents& d, const Tensor& reference,
                                 const Tensor& adv, std::span<const int> labels, double alpha,
                                 const std::optional<Tensor>& noise) {
  d.validate();
  check_labels(adv, labels);
  const Tensor gm = mmd_input_gradient(*d.detector, reference, adv, nullptr);
  const Tensor gc = ce_branch_gradient(d, adv, labels, noise);
  return ops::add(gm, ops::scale(gc, alpha));
}

EotStep adaptive_eot_gradient(const DefenseComponents& d, const Tensor& reference,
                              const Tensor& adv, std::span<const int> labels,
                              const AdaptiveAttackConfig& cfg, Rng& rng) {
  d.validate();
  check_labels(adv, labels);
  EotStep step;
  // The MMD term does not depend on the replica noise, so its gradient is
  // shared; only the cross-entropy term is averaged over replicas.
  const Tensor gm = mmd_input_gradient(*d.detector, reference, adv, &step.statistic);
  step.clean_branch = rules_clean(step.statistic, cfg.threshold);
  const std::size_t k = cfg.attack.eot;
  Tensor gc_sum = Tensor::zeros(adv.shape());
  if (step.clean_branch) {
    // Deterministic branch: every replica yields the same gradient.
    gc_sum = ops::scale(ce_branch_gradient(d, adv, labels, std::nullopt), static_cast<double>(k));
  } else {
    for (std::size_t r = 0; r < k; ++r) {
      const Tensor n = sample_gaussian(rng, adv.shape(), cfg.noise.mu, cfg.noise.sigma);
      gc_sum = ops::add(gc_sum, ce_branch_gradient(d, adv, labels, n));
    }
  }
  step.gradient = ops::add(gm, ops::scale(gc_sum, cfg.alpha / static_cast<double>(k)));
  return step;
}

Tensor adaptive_pgd_eot(const DefenseComponents& d, const Tensor& clean,
                        std::span<const int> labels, const AdaptiveAttackConfig& cfg, Rng& rng,
                        const std::optional<Tensor>& reference) {
  d.validate();
  cfg.attack.validate();
  check_labels(clean, labels);
  const Tensor& ref = reference ? *reference : clean;
  Tensor adv = clean;
  if (cfg.attack.random_start) {
    adv = project(random_start(clean, cfg.attack.norm, cfg.attack.epsilon, rng), clean,
                  cfg.attack.norm, cfg.attack.epsilon);
  }
  for (std::size_t it = 0; it < cfg.attack.iterations; ++it) {
    const EotStep s = adaptive_eot_gradient(d, ref, adv, labels, cfg, rng);
    adv = ops::add(adv, ops::scale(step_direction(s.gradient, cfg.attack.norm), cfg.attack.step));
    adv = project(adv, clean, cfg.attack.norm, cfg.attack.epsilon);
  }
  return adv;
}

}  // namespace ddad

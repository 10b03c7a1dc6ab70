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
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ddad/attacks.hpp"
#include "ddad/dataio.hpp"
#include "ddad/discrepancy.hpp"
#include "ddad/models.hpp"
#include "ddad/rng.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

// --- Denoiser training -----------------------------------------------------

struct DenoiserTrainConfig {
  std::size_t epochs = 60;
  double lr = 1e-3;
  /// The learning rate is divided by 10 once the (0-indexed) epoch reaches
  /// each milestone.
  std::vector<std::size_t> decay_epochs{45, 60};
  double alpha = 1e-2;
  NoiseConfig noise;
  /// Attack used to craft the training adversarial batches.
  AttackConfig attack{Norm::kLinf, 0.1, 0.025, 10, 1, true};
  std::size_t batch_size = 100;

  void validate() const;
};

double scheduled_lr(double base, const std::vector<std::size_t>& milestones, std::size_t epoch);

struct DenoiserTrainResult {
  DenoiserParams params;
  /// Mean minibatch loss per epoch.
  std::vector<double> loss_trajectory;
};

/// Loss minimized by the denoiser on one minibatch:
///   MMD(S_C, g(S_noise)) + alpha CE(h(g(S_noise)), y)
/// Built on `tape` with the denoiser bound as `dv`.
Var denoiser_loss(const KernelVars& kv, const ClassifierVars& cv, const DenoiserVars& dv,
                  const Embedding& clean, const Var& noisy, std::span<const int> labels,
                  double alpha);

/// Trains a fresh denoiser against a frozen detector kernel and classifier.
DenoiserTrainResult train_denoiser(const ImageBatch& train, const DetectorModel& detector,
                                   const ClassifierParams& classifier,
                                   const DenoiserTrainConfig& cfg, Rng& rng);

// --- Two-pronged inference -------------------------------------------------

enum class Routing {
  kGated,         // statistic decides between the two prongs
  kAlwaysDenoise  // every batch goes through the denoiser
};

struct DefensePipeline {
  DetectorModel detector;
  DenoiserParams denoiser;
  std::shared_ptr<const ClassifierParams> classifier;
  /// S_V, exactly detector.batch_size rows.
  Tensor reference;
  Routing routing = Routing::kGated;
  /// When set, every call draws a fresh S_V from `reference_pool`.
  bool resample_reference = false;
  Tensor reference_pool;

  std::size_t batch_size() const { return detector.batch_size; }
  DefenseComponents components() const;
  void validate() const;
};

/// Draws S_V (size B) from a held-out pool with a seeded generator.
Tensor draw_reference(const Tensor& pool, std::size_t batch_size, std::uint64_t seed);

struct Verdict {
  bool adversarial = false;
  double statistic = 0.0;
};

struct DefenseResult {
  std::vector<int> labels;
  Verdict verdict;
};

/// Classifies S_T directly when the gate rules it clean, else after denoising.
/// `rng` is only consulted when the pipeline resamples S_V.
DefenseResult defend_batch(const DefensePipeline& p, const Tensor& batch, Rng* rng = nullptr);

/// FIFO accumulator that releases batches of exactly B samples.
class BatchGate {
 public:
  explicit BatchGate(std::size_t batch_size);

  /// Returns the stacked batch [B, ...] when this push completes one.
  std::optional<Tensor> push(const Tensor& sample);
  std::size_t pending() const { return queue_.size(); }
  std::size_t batch_size() const { return batch_size_; }

 private:
  std::size_t batch_size_;
  std::deque<Tensor> queue_;
  std::optional<Shape> sample_shape_;
};

// --- Evaluation harness ----------------------------------------------------

struct EvalConfig {
  std::size_t trials = 10;
  std::uint64_t seed = 0;
  AdaptiveAttackConfig attack;
  /// Measure the attacker's MMD term against S_V instead of its own S_C.
  bool attack_against_reference = false;
};

/// One evaluation trial: a clean test batch and its adaptive adversarial twin.
struct TrialBatch {
  Tensor clean;
  Tensor adversarial;
  std::vector<int> labels;
};

/// Deterministic in (seed, trial): same seeds give the same batches.
TrialBatch make_trial(const DefensePipeline& p, const ImageBatch& source, const EvalConfig& cfg,
                      std::size_t trial);

struct PipelineMetrics {
  double bare_clean_accuracy = 0.0;
  double defended_clean_accuracy = 0.0;
  double defended_clean_std = 0.0;
  double defended_robust_accuracy = 0.0;
  double defended_robust_std = 0.0;
  /// Fraction of clean batches ruled clean.
  double clean_verdict_rate = 0.0;
  /// Fraction of adversarial batches ruled adversarial.
  double detection_rate = 0.0;
  std::size_t trials = 0;
};

PipelineMetrics evaluate_pipeline(const DefensePipeline& p, const ImageBatch& source,
                                  const EvalConfig& cfg);

struct CurvePoint {
  double x = 0.0;
  double accuracy = 0.0;
  double std = 0.0;
  std::size_t trials = 0;
};

/// Mixed-batch accuracy per AE proportion, scored against clean labels.
/// Adversarial rows replace clean rows at seeded positions without reordering,
/// so p = 0 and p = 1 reproduce the pure clean and robust batches.
std::vector<CurvePoint> eval_mixed(const DefensePipeline& p, const ImageBatch& source,
                                   const std::vector<double>& proportions, const EvalConfig& cfg);

/// Defended clean accuracy per batch size. The threshold is recalibrated at
/// each size on `calibration_pool` and S_V is redrawn from it.
std::vector<CurvePoint> eval_batch_size(const DefensePipeline& p, const ImageBatch& source,
                                        const Tensor& calibration_pool,
                                        const std::vector<std::size_t>& sizes,
                                        std::size_t calibration_trials, const EvalConfig& cfg);

struct AblationSwitches {
  bool no_noise = false;
  bool no_gate = false;
  bool denoiser_only = false;
};

struct AblationRow {
  std::string name;
  double clean_accuracy = 0.0;
  double clean_std = 0.0;
  double robust_accuracy = 0.0;
  double robust_std = 0.0;
};

/// Always reports the full pipeline first, then one row per enabled switch.
/// no_noise retrains the denoiser with sigma = 0 and attacks it accordingly.
std::vector<AblationRow> ablate(const DefensePipeline& p, const ImageBatch& train,
                                const ImageBatch& source, const DenoiserTrainConfig& train_cfg,
                                const AblationSwitches& switches, const EvalConfig& cfg,
                                Rng& rng);

std::string curve_csv(const std::string& x_name, const std::vector<CurvePoint>& points);
std::string ablation_jsonl(const std::vector<AblationRow>& rows);

}  // namespace ddad

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

#include "ddad/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ddad/errors.hpp"
#include "ddad/ops.hpp"
#include "ddad/optim.hpp"

namespace ddad {

void DenoiserTrainConfig::validate() const {
  if (!(alpha > 0.0)) throw InvalidArgument("denoiser alpha must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("denoiser learning rate must be positive");
  if (epochs == 0) throw InvalidArgument("denoiser needs at least one epoch");
  if (batch_size < 2) throw InvalidArgument("denoiser batch size must be at least 2");
  if (!(noise.sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
  attack.validate();
}

double scheduled_lr(double base, const std::vector<std::size_t>& milestones, std::size_t epoch) {
  double lr = base;
  for (std::size_t m : milestones) {
    if (epoch >= m) lr /= 10.0;
  }
  return lr;
}

Var denoiser_loss(const KernelVars& kv, const ClassifierVars& cv, const DenoiserVars& dv,
                  const Embedding& clean, const Var& noisy, std::span<const int> labels,
                  double alpha) {
  const Var restored = denoiser_forward(dv, noisy);
  const Var mmd = mmd_u_squared(kv, clean, embed(kv, restored));
  const Var ce = ad::cross_entropy(classifier_logits(cv, restored), labels);
  return ad::add(mmd, ad::scale(ce, alpha));
}

DenoiserTrainResult train_denoiser(const ImageBatch& train, const DetectorModel& detector,
                                   const ClassifierParams& classifier,
                                   const DenoiserTrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!train.has_labels()) throw InvalidArgument("train_denoiser: training data needs labels");
  if (train.size() < 2) throw InvalidArgument("train_denoiser: need at least 2 samples");

  DenoiserTrainResult result;
  result.params = init_denoiser(rng, train.dim());
  std::vector<Tensor> params;
  for (const Tensor* t : std::as_const(result.params).tensors()) params.push_back(*t);
  AdamState adam = AdamState::for_params(params);

  const Tensor flat = train.data.flattened();
  const auto& featurizer = detector.kernel.featurizer;
  const Tensor feat = featurizer ? features(*featurizer, flat) : flat;
  const std::size_t n = train.size();
  const std::size_t b = std::min(cfg.batch_size, n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.lr, cfg.decay_epochs, epoch);
    const auto order = rng.permutation(n);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    // Full minibatches only: the paired estimator needs equal sizes >= 2.
    for (std::size_t start = 0; start + b <= n; start += b) {
      std::span<const std::size_t> idx(order.data() + start, b);
      std::vector<int> y;
      for (auto i : idx) y.push_back(train.labels[i]);
      const Tensor sc = gather_rows(flat, idx);
      const Tensor sa = pgd(classifier, sc, y, cfg.attack, rng);
      const Tensor noisy = inject_noise(sa, cfg.noise, rng);

      Tape tape;
      const KernelVars kv = bind_kernel(tape, detector.kernel, false);
      const ClassifierVars cv = bind_classifier(tape, classifier, false);
      DenoiserVars dv{tape.leaf(params[0]), tape.leaf(params[1]), tape.leaf(params[2]),
                      tape.leaf(params[3])};
      const Embedding clean =
          featurizer ? embed_constant(tape, sc, gather_rows(feat, idx)) : embed_constant(tape, sc, sc);
      const Var loss = denoiser_loss(kv, cv, dv, clean, tape.constant(noisy), y, cfg.alpha);
      tape.backward(loss);
      const std::vector<Tensor> grads = {tape.grad(dv.w1), tape.grad(dv.b1), tape.grad(dv.w2),
                                         tape.grad(dv.b2)};
      adam_step(params, grads, adam, lr);
      loss_sum += loss.value().item();
      ++batches;
    }
    result.loss_trajectory.push_back(loss_sum / static_cast<double>(batches));
  }
  auto dst = result.params.tensors();
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k] = params[k];
  return result;
}

// --- Inference ---------------------------------------------------------------

DefenseComponents DefensePipeline::components() const {
  return {&detector, &denoiser, classifier.get()};
}

void DefensePipeline::validate() const {
  if (!classifier) throw InvalidArgument("pipeline: classifier missing");
  if (detector.batch_size < 2) throw InvalidArgument("pipeline: batch size must be at least 2");
  if (resample_reference) {
    if (reference_pool.rows() < detector.batch_size) {
      throw InvalidArgument("pipeline: reference pool smaller than the batch size");
    }
  } else if (reference.rows() != detector.batch_size) {
    throw ShapeError("pipeline: S_V has " + std::to_string(reference.rows()) +
                     " rows, batch size is " + std::to_string(detector.batch_size));
  }
  if (denoiser.input_dim() != classifier->input_dim()) {
    throw ShapeError("pipeline: denoiser and classifier disagree on input size");
  }
}

Tensor draw_reference(const Tensor& pool, std::size_t batch_size, std::uint64_t seed) {
  if (pool.rows() < batch_size) {
    throw InvalidArgument("reference pool has " + std::to_string(pool.rows()) +
                          " rows, need " + std::to_string(batch_size));
  }
  Rng rng(seed);
  auto idx = rng.sample_without_replacement(pool.rows(), batch_size);
  std::sort(idx.begin(), idx.end());
  return gather_rows(pool, idx);
}

DefenseResult defend_batch(const DefensePipeline& p, const Tensor& batch, Rng* rng) {
  p.validate();
  if (batch.rows() != p.batch_size()) {
    throw ShapeError("defend_batch: got " + std::to_string(batch.rows()) +
                     " samples, the gate expects batches of " + std::to_string(p.batch_size()));
  }
  DefenseResult out;
  if (p.routing == Routing::kGated) {
    Tensor fresh;
    if (p.resample_reference) {
      if (!rng) throw InvalidArgument("defend_batch: resampling S_V needs a generator");
      fresh = draw_reference(p.reference_pool, p.batch_size(), rng->next_u64());
    }
    const Tensor& ref = p.resample_reference ? fresh : p.reference;
    out.verdict.statistic = mmd_opt(p.detector, ref, batch);
    out.verdict.adversarial = !rules_clean(out.verdict.statistic, p.detector.threshold);
  } else {
    out.verdict.statistic = std::numeric_limits<double>::quiet_NaN();
    out.verdict.adversarial = true;
  }
  out.labels = out.verdict.adversarial ? predict(*p.classifier, denoise(p.denoiser, batch))
                                       : predict(*p.classifier, batch);
  return out;
}

BatchGate::BatchGate(std::size_t batch_size) : batch_size_(batch_size) {
  if (batch_size < 2) throw InvalidArgument("batch gate size must be at least 2");
}

std::optional<Tensor> BatchGate::push(const Tensor& sample) {
  if (!sample_shape_) sample_shape_ = sample.shape();
  if (*sample_shape_ != sample.shape()) {
    throw ShapeError("batch gate: sample " + shape_str(sample.shape()) + " after " +
                     shape_str(*sample_shape_));
  }
  queue_.push_back(sample);
  if (queue_.size() < batch_size_) return std::nullopt;
  Shape shape{batch_size_};
  shape.insert(shape.end(), sample.shape().begin(), sample.shape().end());
  std::vector<double> values;
  values.reserve(batch_size_ * sample.numel());
  for (const Tensor& s : queue_) values.insert(values.end(), s.data().begin(), s.data().end());
  queue_.clear();
  return Tensor(shape, std::move(values));
}

// --- Evaluation --------------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return derive_seed(derive_seed(seed, a), b);
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;
};

Stats summarize(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::vector<std::size_t> draw_indices(std::size_t n, std::size_t b, std::uint64_t seed) {
  if (n < b) {
    throw InvalidArgument("evaluation set has " + std::to_string(n) + " samples, batch needs " +
                          std::to_string(b));
  }
  Rng rng(seed);
  auto idx = rng.sample_without_replacement(n, b);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AdaptiveAttackConfig attack_for(const DefensePipeline& p, const EvalConfig& cfg) {
  AdaptiveAttackConfig a = cfg.attack;
  // White-box: the attacker knows the deployed threshold and routing.
  a.threshold = p.routing == Routing::kGated ? p.detector.threshold
                                             : -std::numeric_limits<double>::infinity();
  return a;
}

}  // namespace

TrialBatch make_trial(const DefensePipeline& p, const ImageBatch& source, const EvalConfig& cfg,
                      std::size_t trial) {
  if (!source.has_labels()) throw InvalidArgument("evaluation set needs labels");
  const auto idx = draw_indices(source.size(), p.batch_size(), mix_seed(cfg.seed, trial, 1));
  TrialBatch t;
  t.clean = gather_rows(source.data, idx);
  for (auto i : idx) t.labels.push_back(source.labels[i]);
  Rng rng(mix_seed(cfg.seed, trial, 2));
  std::optional<Tensor> ref;
  if (cfg.attack_against_reference) ref = p.reference.reshaped(t.clean.shape());
  t.adversarial =
      adaptive_pgd_eot(p.components(), t.clean, t.labels, attack_for(p, cfg), rng, ref);
  return t;
}

PipelineMetrics evaluate_pipeline(const DefensePipeline& p, const ImageBatch& source,
                                  const EvalConfig& cfg) {
  p.validate();
  std::vector<double> bare, clean, robust;
  std::size_t clean_verdicts = 0, detections = 0;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const TrialBatch t = make_trial(p, source, cfg, trial);
    Rng rng(mix_seed(cfg.seed, trial, 3));
    bare.push_back(accuracy(predict(*p.classifier, t.clean), t.labels));
    const DefenseResult c = defend_batch(p, t.clean, &rng);
    const DefenseResult a = defend_batch(p, t.adversarial, &rng);
    clean.push_back(accuracy(c.labels, t.labels));
    robust.push_back(accuracy(a.labels, t.labels));
    clean_verdicts += c.verdict.adversarial ? 0 : 1;
    detections += a.verdict.adversarial ? 1 : 0;
  }
  PipelineMetrics m;
  m.trials = cfg.trials;
  m.bare_clean_accuracy = summarize(bare).mean;
  const Stats cs = summarize(clean), rs = summarize(robust);
  m.defended_clean_accuracy = cs.mean;
  m.defended_clean_std = cs.std;
  m.defended_robust_accuracy = rs.mean;
  m.defended_robust_std = rs.std;
  const double n = static_cast<double>(std::max<std::size_t>(cfg.trials, 1));
  m.clean_verdict_rate = static_cast<double>(clean_verdicts) / n;
  m.detection_rate = static_cast<double>(detections) / n;
  return m;
}

std::vector<CurvePoint> eval_mixed(const DefensePipeline& p, const ImageBatch& source,
                                   const std::vector<double>& proportions,
                                   const EvalConfig& cfg) {
  p.validate();
  for (double q : proportions) {
    if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("AE proportion outside [0, 1]");
  }
  const std::size_t b = p.batch_size();
  std::vector<std::vector<double>> acc(proportions.size());
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const TrialBatch t = make_trial(p, source, cfg, trial);
    for (std::size_t k = 0; k < proportions.size(); ++k) {
      const auto n_adv = static_cast<std::size_t>(std::llround(proportions[k] * double(b)));
      Rng pos(mix_seed(cfg.seed, trial, 100 + k));
      std::vector<bool> take(b, false);
      for (auto i : pos.sample_without_replacement(b, n_adv)) take[i] = true;
      Tensor mixed = t.clean;
      for (std::size_t i = 0; i < b; ++i) {
        if (!take[i]) continue;
        auto dst = mixed.row(i);
        auto src = t.adversarial.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
      }
      Rng rng(mix_seed(cfg.seed, trial, 3));
      acc[k].push_back(accuracy(defend_batch(p, mixed, &rng).labels, t.labels));
    }
  }
  std::vector<CurvePoint> out;
  for (std::size_t k = 0; k < proportions.size(); ++k) {
    const Stats s = summarize(acc[k]);
    out.push_back({proportions[k], s.mean, s.std, cfg.trials});
  }
  return out;
}

std::vector<CurvePoint> eval_batch_size(const DefensePipeline& p, const ImageBatch& source,
                                        const Tensor& calibration_pool,
                                        const std::vector<std::size_t>& sizes,
                                        std::size_t calibration_trials, const EvalConfig& cfg) {
  if (!source.has_labels()) throw InvalidArgument("evaluation set needs labels");
  for (std::size_t b : sizes) {
    if (b < 2) throw InvalidArgument("batch size " + std::to_string(b) + " is below 2");
  }
  std::vector<CurvePoint> out;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const std::size_t b = sizes[k];
    DefensePipeline q = p;
    q.detector.batch_size = b;
    // S_V and the calibration batches come from disjoint parts of the pool.
    Rng split_rng(mix_seed(cfg.seed, k, 5));
    const auto perm = split_rng.permutation(calibration_pool.rows());
    if (perm.size() < 2 * b) {
      throw InvalidArgument("calibration pool too small for batch size " + std::to_string(b));
    }
    std::vector<std::size_t> ref_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(b));
    std::vector<std::size_t> rest(perm.begin() + static_cast<std::ptrdiff_t>(b), perm.end());
    std::sort(ref_idx.begin(), ref_idx.end());
    std::sort(rest.begin(), rest.end());
    q.reference = gather_rows(calibration_pool, ref_idx);
    q.resample_reference = false;
    Rng cal_rng(mix_seed(cfg.seed, k, 4));
    const CalibrationResult cal =
        calibrate_threshold(q.detector.kernel, gather_rows(calibration_pool, rest), b,
                            q.detector.calibration.far_target, calibration_trials, cal_rng,
                            &q.reference);
    q.detector.threshold = cal.threshold;
    q.detector.calibration = cal.report;
    std::vector<double> acc;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
      const auto idx = draw_indices(source.size(), b, mix_seed(cfg.seed, trial, 6 + 1000 * k));
      std::vector<int> y;
      for (auto i : idx) y.push_back(source.labels[i]);
      Rng rng(mix_seed(cfg.seed, trial, 3));
      acc.push_back(accuracy(defend_batch(q, gather_rows(source.data, idx), &rng).labels, y));
    }
    const Stats s = summarize(acc);
    out.push_back({static_cast<double>(b), s.mean, s.std, cfg.trials});
  }
  return out;
}

std::vector<AblationRow> ablate(const DefensePipeline& p, const ImageBatch& train,
                                const ImageBatch& source, const DenoiserTrainConfig& train_cfg,
                                const AblationSwitches& switches, const EvalConfig& cfg,
                                Rng& rng) {
  auto row = [&](const std::string& name, const DefensePipeline& q, const EvalConfig& c) {
    const PipelineMetrics m = evaluate_pipeline(q, source, c);
    return AblationRow{name, m.defended_clean_accuracy, m.defended_clean_std,
                       m.defended_robust_accuracy, m.defended_robust_std};
  };
  std::vector<AblationRow> rows;
  rows.push_back(row("full", p, cfg));
  if (switches.no_noise) {
    DenoiserTrainConfig tc = train_cfg;
    tc.noise.sigma = 0.0;
    DefensePipeline q = p;
    q.denoiser = train_denoiser(train, p.detector, *p.classifier, tc, rng).params;
    EvalConfig c = cfg;
    c.attack.noise.sigma = 0.0;
    rows.push_back(row("no_noise", q, c));
  }
  if (switches.no_gate || switches.denoiser_only) {
    DefensePipeline q = p;
    q.routing = Routing::kAlwaysDenoise;
    const AblationRow r = row("no_gate", q, cfg);
    if (switches.no_gate) rows.push_back(r);
    if (switches.denoiser_only) {
      rows.push_back(r);
      rows.back().name = "denoiser_only";
    }
  }
  return rows;
}

std::string curve_csv(const std::string& x_name, const std::vector<CurvePoint>& points) {
  std::ostringstream os;
  os << x_name << ",accuracy,std\n";
  for (const auto& pt : points) {
    os << format_double(pt.x) << ',' << format_double(pt.accuracy) << ','
       << format_double(pt.std) << '\n';
  }
  return os.str();
}

std::string ablation_jsonl(const std::vector<AblationRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::json j;
    j["configuration"] = r.name;
    j["clean_accuracy"] = r.clean_accuracy;
    j["clean_std"] = r.clean_std;
    j["robust_accuracy"] = r.robust_accuracy;
    j["robust_std"] = r.robust_std;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace ddad

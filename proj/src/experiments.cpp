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

#include "ddad/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "ddad/attacks.hpp"
#include "ddad/defense.hpp"
#include "ddad/discrepancy.hpp"
#include "ddad/errors.hpp"
#include "ddad/models.hpp"
#include "ddad/theory.hpp"
#include "ddad/version.hpp"

namespace ddad {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Independent random streams per stage.
enum Stream : std::uint64_t {
  kData = 1,
  kClassifier,
  kKernel,
  kCalibrate,
  kDenoiser,
  kAttack,
  kDefend,
  kMixed,
  kBatchSize,
  kAblate,
  kVerify,
};

struct Artifact {
  const char* file;
  const char* producer;
};

constexpr Artifact kClassifierArtifact{"classifier.ddm", "train-classifier"};
constexpr Artifact kKernelArtifact{"kernel.ddm", "train-kernel"};
constexpr Artifact kDetectorArtifact{"detector.ddm", "calibrate"};
constexpr Artifact kDenoiserArtifact{"denoiser.ddm", "train-denoiser"};

void require(const fs::path& out, std::initializer_list<Artifact> needed) {
  std::string missing;
  for (const auto& a : needed) {
    if (fs::exists(out / a.file)) continue;
    if (!missing.empty()) missing += "; ";
    missing += (out / a.file).string() + " (run '" + a.producer + "' first)";
  }
  if (!missing.empty()) throw MissingArtifact("required artifact not found: " + missing);
}

void require_images(const RunConfig& cfg, const std::string& name) {
  if (cfg.dataset == DatasetKind::kSynthBlobs) {
    throw ConfigError("'" + name + "' needs an image dataset; synth_blobs supports only "
                      "train-kernel and calibrate");
  }
}

void write_text(const fs::path& out, const std::string& file, const std::string& text,
                RunSummary& summary) {
  write_file_atomic(out / file, text);
  summary.artifacts.push_back(file);
}

void write_json(const fs::path& out, const std::string& file, const json& j,
                RunSummary& summary) {
  write_text(out, file, j.dump(2) + "\n", summary);
}

void save(const fs::path& out, const std::string& file, const ModelContainer& c,
          RunSummary& summary) {
  save_model(out / file, c);
  summary.artifacts.push_back(file);
}

SplitSpec split_spec(const RunConfig& cfg) {
  SplitSpec s;
  s.train_fraction = cfg.train_fraction;
  s.validation_fraction = cfg.validation_fraction;
  s.reference_size = cfg.batch_size;
  s.seed = cfg.seed;
  return s;
}

AttackConfig train_attack(const RunConfig& cfg) {
  return {parse_norm(cfg.norm), cfg.epsilon, cfg.train_attack_step, cfg.train_attack_iterations,
          1, true};
}

AttackConfig eval_attack(const RunConfig& cfg) {
  return {parse_norm(cfg.norm), cfg.epsilon, cfg.step_size, cfg.pgd_iterations, cfg.eot,
          cfg.random_start};
}

AdaptiveAttackConfig adaptive_attack(const RunConfig& cfg, double threshold) {
  AdaptiveAttackConfig a;
  a.attack = eval_attack(cfg);
  a.noise = {cfg.noise_mu, cfg.noise_sigma};
  a.threshold = threshold;
  a.alpha = cfg.alpha;
  return a;
}

EvalConfig eval_config(const RunConfig& cfg, Stream stream) {
  EvalConfig e;
  e.trials = cfg.eval_trials;
  e.seed = derive_seed(cfg.seed, stream);
  e.attack = adaptive_attack(cfg, 0.0);
  e.attack_against_reference = cfg.attack_against_reference;
  return e;
}

DenoiserTrainConfig denoiser_config(const RunConfig& cfg) {
  DenoiserTrainConfig d;
  d.epochs = cfg.denoiser_epochs;
  d.lr = cfg.denoiser_lr;
  d.decay_epochs = cfg.decay_epochs;
  d.alpha = cfg.alpha;
  d.noise = {cfg.noise_mu, cfg.noise_sigma};
  d.attack = train_attack(cfg);
  d.batch_size = cfg.batch_size;
  return d;
}

json trajectory(const std::vector<double>& v) { return json(v); }

// --- Blobs: two point clouds split alike ------------------------------------

struct BlobCorpus {
  Corpus clean;    // class 0
  Corpus shifted;  // class 1
};

Corpus split_rows(const Tensor& points, int label, const SplitSpec& spec) {
  ImageBatch all;
  all.data = points;
  all.labels.assign(points.rows(), label);
  all.classes = 2;
  const Split s = make_split(points.rows(), spec);
  return {all.subset(s.train), all.subset(s.reference), all.subset(s.validation),
          all.subset(s.test)};
}

BlobCorpus load_blobs(const RunConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kData));
  const BlobPair pair = synth_blobs(rng, cfg.blobs_n, cfg.blobs_dim, cfg.blobs_delta);
  SplitSpec spec = split_spec(cfg);
  BlobCorpus out;
  out.clean = split_rows(pair.class0, 0, spec);
  spec.seed = derive_seed(cfg.seed, kData + 100);
  out.shifted = split_rows(pair.class1, 1, spec);
  return out;
}

// --- Loading trained components ---------------------------------------------

std::shared_ptr<const ClassifierParams> load_classifier_artifact(const fs::path& out,
                                                                 const Corpus& corpus) {
  auto cls = std::make_shared<const ClassifierParams>(
      load_classifier(load_model(out / kClassifierArtifact.file)));
  if (cls->input_dim() != corpus.test.dim()) {
    throw ConfigError("classifier expects " + std::to_string(cls->input_dim()) +
                      " inputs but the dataset has " + std::to_string(corpus.test.dim()));
  }
  return cls;
}

void check_batch(const RunConfig& cfg, const DetectorModel& det) {
  if (det.batch_size != cfg.batch_size) {
    throw ConfigError("detector artifact was calibrated for batch_size " +
                      std::to_string(det.batch_size) + " but the config says " +
                      std::to_string(cfg.batch_size));
  }
}

struct LoadedDetector {
  DetectorModel model;
  Tensor reference;
};

LoadedDetector load_detector_artifact(const fs::path& out, const RunConfig& cfg,
                                      std::shared_ptr<const ClassifierParams> cls) {
  const ModelContainer c = load_model(out / kDetectorArtifact.file);
  LoadedDetector d{load_detector(c, std::move(cls)), c.get("reference")};
  check_batch(cfg, d.model);
  return d;
}

DefensePipeline load_pipeline(const fs::path& out, const RunConfig& cfg, const Corpus& corpus) {
  require(out, {kClassifierArtifact, kDetectorArtifact, kDenoiserArtifact});
  DefensePipeline p;
  p.classifier = load_classifier_artifact(out, corpus);
  LoadedDetector d = load_detector_artifact(out, cfg, p.classifier);
  p.detector = std::move(d.model);
  p.reference = std::move(d.reference);
  p.denoiser = load_denoiser(load_model(out / kDenoiserArtifact.file));
  p.resample_reference = cfg.resample_reference;
  if (p.resample_reference) p.reference_pool = corpus.validation.data;
  p.validate();
  return p;
}

// --- Subcommands -------------------------------------------------------------

void train_classifier_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  require_images(cfg, s.subcommand);
  const Corpus corpus = load_corpus(cfg);
  Rng rng(derive_seed(cfg.seed, kClassifier));
  const TrainedClassifier tc = train_classifier(
      corpus.train, {cfg.classifier_epochs, cfg.classifier_lr, cfg.classifier_batch}, rng);
  const double test_acc = accuracy(predict(tc.params, corpus.test.data), corpus.test.labels);
  ModelContainer c;
  store_classifier(c, tc.params);
  c.set_meta("dataset", dataset_name(cfg.dataset));
  c.set_meta("seed", std::to_string(cfg.seed));
  save(out, kClassifierArtifact.file, c, s);
  json r;
  r["train_accuracy"] = tc.train_accuracy;
  r["test_accuracy"] = test_acc;
  r["loss_trajectory"] = trajectory(tc.loss_trajectory);
  write_json(out, "classifier.json", r, s);
  s.metrics["clean_accuracy"] = test_acc;
}

void train_kernel_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  KernelTrainConfig kc;
  kc.epochs = cfg.kernel_epochs;
  kc.lr = cfg.kernel_lr;
  kc.batch_size = cfg.batch_size;
  kc.lambda = cfg.lambda;
  kc.train_featurizer = cfg.kernel_train_featurizer;
  Rng rng(derive_seed(cfg.seed, kKernel));

  KernelTrainResult kr;
  if (cfg.dataset == DatasetKind::kSynthBlobs) {
    if (cfg.kernel_train_featurizer) {
      throw ConfigError("kernel_train_featurizer needs a classifier; synth_blobs has none");
    }
    const BlobCorpus blobs = load_blobs(cfg);
    kr = optimize_kernel(blobs.clean.train.data, blobs.shifted.train.data, nullptr, kc, rng);
  } else {
    require(out, {kClassifierArtifact});
    const Corpus corpus = load_corpus(cfg);
    auto cls = load_classifier_artifact(out, corpus);
    const Tensor adv =
        pgd(*cls, corpus.train.data, corpus.train.labels, train_attack(cfg), rng);
    kr = optimize_kernel(corpus.train.data, adv, cls, kc, rng);
  }
  DetectorModel det;
  det.kernel = kr.kernel;
  det.lambda = cfg.lambda;
  det.batch_size = cfg.batch_size;
  det.owns_featurizer = cfg.kernel_train_featurizer;
  ModelContainer c;
  store_detector(c, det);
  if (cfg.dataset == DatasetKind::kSynthBlobs) c.set_meta("kernel_featurizer", "identity");
  c.set_meta("calibrated", "false");
  save(out, kKernelArtifact.file, c, s);
  json r;
  r["beta0"] = kr.kernel.beta0();
  r["sigma_q"] = kr.kernel.sigma_q();
  r["sigma_phi"] = kr.kernel.sigma_phi();
  r["initial_monitor_j"] = kr.initial_monitor_j;
  r["best_monitor_j"] = kr.best_monitor_j;
  r["best_epoch"] = kr.best_epoch;
  r["monitor_trajectory"] = trajectory(kr.monitor_trajectory);
  r["train_trajectory"] = trajectory(kr.train_trajectory);
  write_json(out, "kernel.json", r, s);
  s.metrics["best_monitor_j"] = kr.best_monitor_j;
}

// Fraction of `trials` random B-batches from `pool` that the gate flags.
double flag_rate(const DetectorModel& det, const Tensor& reference, const Tensor& pool,
                 std::size_t trials, Rng& rng,
                 const std::function<Tensor(const Tensor&, std::span<const std::size_t>)>& prep) {
  if (pool.rows() < det.batch_size || trials == 0) return std::nan("");
  std::size_t flagged = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto idx = rng.sample_without_replacement(pool.rows(), det.batch_size);
    std::sort(idx.begin(), idx.end());
    const Tensor batch = prep(gather_rows(pool, idx), idx);
    flagged += rules_clean(mmd_opt(det, reference, batch), det.threshold) ? 0 : 1;
  }
  return static_cast<double>(flagged) / static_cast<double>(trials);
}

void calibrate_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  const bool blobs = cfg.dataset == DatasetKind::kSynthBlobs;
  require(out, blobs ? std::initializer_list<Artifact>{kKernelArtifact}
                     : std::initializer_list<Artifact>{kClassifierArtifact, kKernelArtifact});
  std::optional<BlobCorpus> bc;
  Corpus corpus;
  if (blobs) {
    bc = load_blobs(cfg);
    corpus = bc->clean;
  } else {
    corpus = load_corpus(cfg);
  }
  std::shared_ptr<const ClassifierParams> cls;
  if (!blobs) cls = load_classifier_artifact(out, corpus);
  const ModelContainer kc = load_model(out / kKernelArtifact.file);
  DetectorModel det = load_detector(kc, cls);
  check_batch(cfg, det);
  const Tensor& reference = corpus.reference.data;
  Rng rng(derive_seed(cfg.seed, kCalibrate));
  det.calibration.far_target = cfg.far;
  std::vector<double> stats;
  if (cfg.threshold_mode == ThresholdMode::kCalibrate) {
    CalibrationResult cal = calibrate_threshold(det.kernel, corpus.validation.data, cfg.batch_size,
                                                cfg.far, cfg.calibration_trials, rng, &reference);
    det.threshold = cal.threshold;
    det.calibration = cal.report;
    stats = std::move(cal.statistics);
  } else {
    det.threshold = cfg.threshold;
    det.calibration.trials = 0;
  }

  const auto identity = [](const Tensor& b, std::span<const std::size_t>) { return b; };
  const double far_test =
      flag_rate(det, reference, corpus.test.data, cfg.eval_trials, rng, identity);
  double power = 0.0;
  if (blobs) {
    power = flag_rate(det, reference, bc->shifted.test.data, cfg.eval_trials, rng, identity);
  } else {
    const AttackConfig ac = train_attack(cfg);
    const auto attack = [&](const Tensor& b, std::span<const std::size_t> idx) {
      std::vector<int> y;
      for (auto i : idx) y.push_back(corpus.validation.labels[i]);
      return pgd(*cls, b, y, ac, rng);
    };
    power = flag_rate(det, reference, corpus.validation.data, cfg.eval_trials, rng, attack);
  }

  ModelContainer c;
  store_detector(c, det);
  if (blobs) c.set_meta("kernel_featurizer", "identity");
  c.set_meta("threshold_mode", cfg.threshold_mode == ThresholdMode::kCalibrate ? "calibrate" : "fixed");
  c.put("reference", reference);
  save(out, kDetectorArtifact.file, c, s);

  json r;
  r["threshold"] = det.threshold;
  r["threshold_mode"] = cfg.threshold_mode == ThresholdMode::kCalibrate ? "calibrate" : "fixed";
  r["far_target"] = det.calibration.far_target;
  r["far_estimate"] = det.calibration.far_estimate;
  r["calibration_trials"] = det.calibration.trials;
  r["test_false_alarm_rate"] = far_test;
  r["power"] = power;
  r["statistics"] = json(stats);
  write_json(out, "calibration.json", r, s);
  s.metrics["threshold"] = det.threshold;
  s.metrics["far"] = far_test;
  s.metrics["power"] = power;
}

void train_denoiser_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  require_images(cfg, s.subcommand);
  require(out, {kClassifierArtifact, kDetectorArtifact});
  const Corpus corpus = load_corpus(cfg);
  auto cls = load_classifier_artifact(out, corpus);
  const LoadedDetector det = load_detector_artifact(out, cfg, cls);
  Rng rng(derive_seed(cfg.seed, kDenoiser));
  const DenoiserTrainResult dr = train_denoiser(corpus.train, det.model, *cls, denoiser_config(cfg), rng);
  ModelContainer c;
  store_denoiser(c, dr.params);
  save(out, kDenoiserArtifact.file, c, s);

  const Tensor adv = pgd(*cls, corpus.test.data, corpus.test.labels, train_attack(cfg), rng);
  const Tensor noisy = inject_noise(adv, {cfg.noise_mu, cfg.noise_sigma}, rng);
  json r;
  r["loss_trajectory"] = trajectory(dr.loss_trajectory);
  r["pgd_accuracy"] = accuracy(predict(*cls, adv), corpus.test.labels);
  r["denoised_pgd_accuracy"] = accuracy(predict(*cls, denoise(dr.params, noisy)), corpus.test.labels);
  r["denoised_clean_accuracy"] =
      accuracy(predict(*cls, denoise(dr.params, corpus.test.data)), corpus.test.labels);
  write_json(out, "denoiser.json", r, s);
  s.metrics["denoised_pgd_accuracy"] = r["denoised_pgd_accuracy"].get<double>();
}

void attack_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  require_images(cfg, s.subcommand);
  require(out, {kClassifierArtifact});
  const Corpus corpus = load_corpus(cfg);
  auto cls = load_classifier_artifact(out, corpus);
  std::optional<DefensePipeline> pipe;
  if (cfg.attack == AttackKind::kAdaptive) pipe = load_pipeline(out, cfg, corpus);

  Rng rng(derive_seed(cfg.seed, kAttack));
  const std::size_t b = cfg.batch_size;
  const std::size_t batches = corpus.test.size() / b;
  if (batches == 0) throw ConfigError("test split is smaller than one batch");
  std::vector<Tensor> clean_parts, adv_parts;
  std::vector<int> labels;
  std::size_t detected = 0;
  double defended_correct = 0.0;
  for (std::size_t k = 0; k < batches; ++k) {
    std::vector<std::size_t> idx(b);
    for (std::size_t i = 0; i < b; ++i) idx[i] = k * b + i;
    const ImageBatch part = corpus.test.subset(idx);
    Tensor adv;
    switch (cfg.attack) {
      case AttackKind::kFgsm: adv = fgsm(*cls, part.data, part.labels, cfg.epsilon); break;
      case AttackKind::kPgd: adv = pgd(*cls, part.data, part.labels, eval_attack(cfg), rng); break;
      case AttackKind::kAdaptive: {
        std::optional<Tensor> ref;
        if (cfg.attack_against_reference) ref = pipe->reference.reshaped(part.data.shape());
        adv = adaptive_pgd_eot(pipe->components(), part.data, part.labels,
                               adaptive_attack(cfg, pipe->detector.threshold), rng, ref);
        Rng drng(derive_seed(cfg.seed, kDefend + 100 + k));
        const DefenseResult d = defend_batch(*pipe, adv, &drng);
        detected += d.verdict.adversarial ? 1 : 0;
        defended_correct += accuracy(d.labels, part.labels) * static_cast<double>(b);
        break;
      }
    }
    clean_parts.push_back(part.data);
    adv_parts.push_back(adv);
    labels.insert(labels.end(), part.labels.begin(), part.labels.end());
  }
  const Tensor clean = concat_rows(clean_parts);
  const Tensor adv = concat_rows(adv_parts);
  const Norm norm = parse_norm(cfg.norm);

  ModelContainer c;
  c.put("clean", clean);
  c.put("adversarial", adv);
  std::vector<double> ylab(labels.begin(), labels.end());
  c.put("labels", Tensor({labels.size()}, ylab));
  c.set_meta("attack", attack_name(cfg.attack));
  c.set_meta("norm", cfg.norm);
  c.set_meta("epsilon", format_double(cfg.epsilon));
  save(out, "adversarial.ddm", c, s);

  json r;
  r["attack"] = attack_name(cfg.attack);
  r["samples"] = labels.size();
  r["clean_accuracy"] = accuracy(predict(*cls, clean), labels);
  r["undefended_robust_accuracy"] = accuracy(predict(*cls, adv), labels);
  r["max_perturbation"] = max_perturbation(adv, clean, norm);
  r["within_budget"] = within_budget(adv, clean, norm, cfg.epsilon);
  if (pipe) {
    r["defended_robust_accuracy"] = defended_correct / static_cast<double>(labels.size());
    r["detection_rate"] = static_cast<double>(detected) / static_cast<double>(batches);
  }
  write_json(out, "attack.json", r, s);
  s.metrics["undefended_robust_accuracy"] = r["undefended_robust_accuracy"].get<double>();
  if (pipe) s.metrics["defended_robust_accuracy"] = r["defended_robust_accuracy"].get<double>();
}

void defend_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  require_images(cfg, s.subcommand);
  const Corpus corpus = load_corpus(cfg);
  const DefensePipeline p = load_pipeline(out, cfg, corpus);
  ImageBatch input = corpus.test;
  if (!cfg.defend_images.empty()) {
    std::optional<fs::path> lab;
    if (!cfg.defend_labels.empty()) lab = cfg.defend_labels;
    input = load_idx(cfg.defend_images, lab);
    if (input.dim() != p.classifier->input_dim()) {
      throw ConfigError("defend_images has " + std::to_string(input.dim()) +
                        " pixels per image, the classifier expects " +
                        std::to_string(p.classifier->input_dim()));
    }
  }
  Rng rng(derive_seed(cfg.seed, kDefend));
  BatchGate gate(p.batch_size());
  std::ostringstream csv;
  csv << "index,batch,prediction" << (input.has_labels() ? ",label" : "") << ",verdict,statistic\n";
  std::size_t batch_no = 0, flagged = 0, correct = 0, emitted = 0;
  Shape sample_shape(input.data.shape().begin() + 1, input.data.shape().end());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto row = input.data.row(i);
    auto full = gate.push(Tensor(sample_shape, std::vector<double>(row.begin(), row.end())));
    if (!full) continue;
    const DefenseResult d = defend_batch(p, *full, &rng);
    flagged += d.verdict.adversarial ? 1 : 0;
    for (std::size_t j = 0; j < d.labels.size(); ++j, ++emitted) {
      csv << emitted << ',' << batch_no << ',' << d.labels[j];
      if (input.has_labels()) {
        csv << ',' << input.labels[emitted];
        correct += d.labels[j] == input.labels[emitted] ? 1 : 0;
      }
      csv << ',' << (d.verdict.adversarial ? "adversarial" : "clean") << ','
          << format_double(d.verdict.statistic) << '\n';
    }
    ++batch_no;
  }
  write_text(out, "predictions.csv", csv.str(), s);
  json r;
  r["samples"] = input.size();
  r["batches"] = batch_no;
  r["predictions"] = emitted;
  r["pending"] = gate.pending();
  r["adversarial_batches"] = flagged;
  if (input.has_labels() && emitted > 0) {
    r["accuracy"] = static_cast<double>(correct) / static_cast<double>(emitted);
    s.metrics["defended_accuracy"] = r["accuracy"].get<double>();
  }
  write_json(out, "defend.json", r, s);
}

void eval_mixed_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  require_images(cfg, s.subcommand);
  const Corpus corpus = load_corpus(cfg);
  const DefensePipeline p = load_pipeline(out, cfg, corpus);
  const auto curve = eval_mixed(p, corpus.test, cfg.mixed_proportions, eval_config(cfg, kMixed));
  write_text(out, "mixed.csv", curve_csv("proportion", curve), s);
  for (const auto& pt : curve) {
    if (pt.x == 0.0) s.metrics["clean_accuracy"] = pt.accuracy;
    if (pt.x == 1.0) s.metrics["robust_accuracy"] = pt.accuracy;
  }
}

void eval_batch_size_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  require_images(cfg, s.subcommand);
  const Corpus corpus = load_corpus(cfg);
  const DefensePipeline p = load_pipeline(out, cfg, corpus);
  const auto curve = eval_batch_size(p, corpus.test, corpus.validation.data, cfg.eval_batch_sizes,
                                     cfg.calibration_trials, eval_config(cfg, kBatchSize));
  write_text(out, "batch_size.csv", curve_csv("batch_size", curve), s);
}

void ablate_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  require_images(cfg, s.subcommand);
  const Corpus corpus = load_corpus(cfg);
  const DefensePipeline p = load_pipeline(out, cfg, corpus);
  AblationSwitches sw;
  for (const auto& a : cfg.ablations) {
    if (a == "no_noise") sw.no_noise = true;
    if (a == "no_gate") sw.no_gate = true;
    if (a == "denoiser_only") sw.denoiser_only = true;
  }
  Rng rng(derive_seed(cfg.seed, kAblate));
  const auto rows = ablate(p, corpus.train, corpus.test, denoiser_config(cfg), sw,
                           eval_config(cfg, kAblate), rng);
  write_text(out, "ablation.jsonl", ablation_jsonl(rows), s);
  for (const auto& r : rows) {
    s.metrics[r.name + ".clean_accuracy"] = r.clean_accuracy;
    s.metrics[r.name + ".robust_accuracy"] = r.robust_accuracy;
  }
}

void verify_bound_cmd(const RunConfig& cfg, const fs::path& out, RunSummary& s) {
  Rng rng(derive_seed(cfg.seed, kVerify));
  const auto source =
      cfg.verify_mode == "all" ? theory::HypothesisSource::kAll : theory::HypothesisSource::kSample;
  theory::TheoremReport total;
  std::optional<theory::DiscreteDomain> first;
  for (std::size_t i = 0; i < cfg.verify_domains; ++i) {
    const theory::DiscreteDomain d = theory::random_domain(rng, cfg.verify_points);
    theory::merge(total, theory::verify_theorem(d, source, cfg.verify_samples, rng));
    if (!first) first = d;
  }
  const double worst = theory::search_worst_excess(rng, cfg.verify_points, 20, 2000);
  json r;
  r["domains"] = cfg.verify_domains;
  r["points"] = cfg.verify_points;
  r["mode"] = cfg.verify_mode;
  r["hypotheses_checked"] = total.hypotheses_checked;
  r["violations"] = total.violations;
  r["min_slack"] = total.min_slack;
  r["max_slack"] = total.max_slack;
  r["worst_search_excess"] = worst;
  write_json(out, "bound.json", r, s);
  s.metrics["violations"] = static_cast<double>(total.violations);

  if (first && cfg.verify_points <= theory::kMaxExhaustive) {
    theory::DiscreteDomain d = *first;
    std::vector<double> target(d.size(), 0.0);
    // Target: all clean mass moved to the point where it is scarcest.
    const auto lightest = std::min_element(d.phi_c.begin(), d.phi_c.end()) - d.phi_c.begin();
    target[static_cast<std::size_t>(lightest)] = 1.0;
    std::vector<double> grid;
    for (int k = 0; k <= 10; ++k) grid.push_back(k / 10.0);
    write_text(out, "probe.csv", theory::probe_csv(theory::tightness_probe(d, target, grid)), s);
  }
}

void update_manifest(const fs::path& out, const RunConfig& cfg, const RunSummary& s) {
  const fs::path path = out / "manifest.json";
  json m;
  if (fs::exists(path)) {
    try {
      m = json::parse(read_file(path));
    } catch (const json::exception&) {
      m = json::object();
    }
  }
  m["version"] = kVersion;
  json run;
  run["seed"] = cfg.seed;
  run["dataset"] = dataset_name(cfg.dataset);
  run["artifacts"] = s.artifacts;
  run["metrics"] = s.metrics;
  run["wall_time_seconds"] = s.wall_seconds;
  m["runs"][s.subcommand] = run;
  write_file_atomic(path, m.dump(2) + "\n");
}

}  // namespace

const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names = {
      "train-classifier", "train-kernel",    "calibrate", "train-denoiser", "attack",
      "defend",           "eval-mixed",      "eval-batch-size", "ablate",   "verify-bound"};
  return names;
}

bool is_subcommand(const std::string& name) {
  const auto& n = subcommand_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

Corpus load_corpus(const RunConfig& cfg) {
  ImageBatch all;
  switch (cfg.dataset) {
    case DatasetKind::kSynthDigits: {
      Rng rng(derive_seed(cfg.seed, kData));
      all = synth_digits(rng, cfg.digits_n, cfg.digits_classes, cfg.digits_noise);
      break;
    }
    case DatasetKind::kIdx: {
      std::optional<fs::path> labels;
      if (!cfg.idx_labels.empty()) labels = cfg.idx_labels;
      all = load_idx(cfg.idx_images, labels);
      if (!all.has_labels()) throw ConfigError("dataset = idx needs idx_labels for training");
      break;
    }
    case DatasetKind::kSynthBlobs:
      return load_blobs(cfg).clean;
  }
  const Split s = make_split(all.labels, split_spec(cfg));
  return {all.subset(s.train), all.subset(s.reference), all.subset(s.validation),
          all.subset(s.test)};
}

DefensePipeline load_defense_pipeline(const RunConfig& cfg) {
  require_images(cfg, "defend");
  return load_pipeline(cfg.out_dir, cfg, load_corpus(cfg));
}

RunSummary run_subcommand(const RunConfig& cfg, const std::string& name) {
  if (!is_subcommand(name)) throw ConfigError("unknown subcommand '" + name + "'");
  cfg.validate();
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();
  RunSummary s;
  s.subcommand = name;
  write_text(out, "config.resolved", echo_config(cfg), s);

  if (name == "train-classifier") train_classifier_cmd(cfg, out, s);
  else if (name == "train-kernel") train_kernel_cmd(cfg, out, s);
  else if (name == "calibrate") calibrate_cmd(cfg, out, s);
  else if (name == "train-denoiser") train_denoiser_cmd(cfg, out, s);
  else if (name == "attack") attack_cmd(cfg, out, s);
  else if (name == "defend") defend_cmd(cfg, out, s);
  else if (name == "eval-mixed") eval_mixed_cmd(cfg, out, s);
  else if (name == "eval-batch-size") eval_batch_size_cmd(cfg, out, s);
  else if (name == "ablate") ablate_cmd(cfg, out, s);
  else verify_bound_cmd(cfg, out, s);

  s.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  update_manifest(out, cfg, s);
  return s;
}

}  // namespace ddad

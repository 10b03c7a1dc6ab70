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

#include "ddad/discrepancy.hpp"

#include <algorithm>
#include <cmath>

#include "ddad/errors.hpp"
#include "ddad/ops.hpp"
#include "ddad/optim.hpp"

namespace ddad {

double DeepKernelParams::beta0() const { return ops::sigmoid(Tensor::scalar(raw_beta0))[0]; }
double DeepKernelParams::sigma_q() const { return std::exp(raw_sigma_q); }
double DeepKernelParams::sigma_phi() const { return std::exp(raw_sigma_phi); }

DeepKernelParams DeepKernelParams::from_values(
    double beta0, double sigma_q, double sigma_phi,
    std::shared_ptr<const ClassifierParams> featurizer) {
  if (!(beta0 > 0.0 && beta0 < 1.0)) throw InvalidArgument("beta0 must lie in (0, 1)");
  if (!(sigma_q > 0.0) || !(sigma_phi > 0.0)) {
    throw InvalidArgument("kernel bandwidths must be positive");
  }
  DeepKernelParams k;
  k.raw_beta0 = std::log(beta0 / (1.0 - beta0));
  k.raw_sigma_q = std::log(sigma_q);
  k.raw_sigma_phi = std::log(sigma_phi);
  k.featurizer = std::move(featurizer);
  return k;
}

// --- Differentiable forms --------------------------------------------------

KernelVars bind_kernel(Tape& tape, const DeepKernelParams& k, bool trainable_scalars,
                       bool trainable_featurizer) {
  auto bind = [&](double v) {
    return trainable_scalars ? tape.leaf(Tensor::scalar(v)) : tape.constant(Tensor::scalar(v));
  };
  KernelVars kv{bind(k.raw_beta0), bind(k.raw_sigma_q), bind(k.raw_sigma_phi), std::nullopt};
  if (k.featurizer) kv.featurizer = bind_classifier(tape, *k.featurizer, trainable_featurizer);
  return kv;
}

Embedding embed(const KernelVars& k, const Var& x) {
  const Shape& s = x.shape();
  Var flat = s.size() == 2 ? x : ad::reshape(x, {s[0], x.value().row_size()});
  Var feat = k.featurizer ? classifier_features(*k.featurizer, flat) : flat;
  return {flat, feat};
}

Embedding embed_constant(Tape& tape, const Tensor& flat, const Tensor& feat) {
  Var f = tape.constant(flat);
  return {f, &flat == &feat ? f : tape.constant(feat)};
}

Var gaussian_gram(const Var& sqdist, const Var& sigma) {
  Tape& tape = *sqdist.tape();
  const Var coeff = ad::div(tape.constant(Tensor::scalar(-0.5)), ad::square(sigma));
  return ad::exp(ad::mul(sqdist, coeff));
}

Var deep_kernel_gram(const KernelVars& k, const Embedding& a, const Embedding& b) {
  const Var q = gaussian_gram(ad::pairwise_sqdist(a.flat, b.flat), ad::exp(k.raw_sigma_q));
  const Var s = gaussian_gram(ad::pairwise_sqdist(a.feat, b.feat), ad::exp(k.raw_sigma_phi));
  const Var beta = ad::sigmoid(k.raw_beta0);
  const Var mix = ad::add(ad::mul(ad::add_scalar(ad::neg(beta), 1.0), s), beta);
  return ad::mul(mix, q);
}

Var h_matrix(const Var& kxx, const Var& kzz, const Var& kxz) {
  return ad::sub(ad::sub(ad::add(kxx, kzz), kxz), ad::transpose(kxz));
}

Var mmd_from_h(const Var& h) {
  const std::size_t n = h.value().dim(0);
  if (n < 2) throw InvalidArgument("MMD estimator needs batches of at least 2 samples");
  const double denom = static_cast<double>(n) * static_cast<double>(n - 1);
  // Mask the diagonal rather than subtracting the trace: the trace can dwarf the
  // off-diagonal sum and subtracting it cancels digits.
  Tensor mask = Tensor::ones({n, n});
  for (std::size_t i = 0; i < n; ++i) mask.at(i, i) = 0.0;
  return ad::scale(ad::sum(ad::mul(h, h.tape()->constant(std::move(mask)))), 1.0 / denom);
}

Var variance_from_h(const Var& h, double lambda) {
  if (!(lambda > 0.0)) throw InvalidArgument("variance regularizer lambda must be positive");
  const double n = static_cast<double>(h.value().dim(0));
  // Centered form of 4/n^3 sum_i r_i^2 - 4/n^4 (sum r)^2; the raw difference
  // loses most of its digits when the row sums are nearly equal.
  const Var row_sums = ad::sum_axis(h, 1);
  const Var centered = ad::sub(row_sums, ad::mean(row_sums));
  const Var v = ad::add_scalar(ad::scale(ad::sum(ad::square(centered)), 4.0 / (n * n * n)), lambda);
  return ad::maximum(v, lambda * kVarianceFloorFactor);
}

namespace {

void check_pair(const Var& x, const Var& z) {
  const std::size_t n = x.value().dim(0), m = z.value().dim(0);
  if (n != m) {
    throw InvalidArgument("MMD batches differ in size (" + std::to_string(n) + " vs " +
                          std::to_string(m) + "); subsample the larger batch to match");
  }
  if (n < 2) throw InvalidArgument("MMD estimator needs batches of at least 2 samples");
}

}  // namespace

Var h_matrix(const KernelVars& k, const Embedding& x, const Embedding& z) {
  check_pair(x.flat, z.flat);
  const Var kxx = deep_kernel_gram(k, x, x);
  const Var kzz = deep_kernel_gram(k, z, z);
  const Var kxz = deep_kernel_gram(k, x, z);
  return h_matrix(kxx, kzz, kxz);
}

Var mmd_u_squared(const KernelVars& k, const Embedding& x, const Embedding& z) {
  return mmd_from_h(h_matrix(k, x, z));
}

PowerTerms j_hat(const KernelVars& k, const Embedding& clean, const Embedding& adv,
                 double lambda) {
  const Var h = h_matrix(k, clean, adv);
  PowerTerms t;
  t.mmd = mmd_from_h(h);
  t.variance = variance_from_h(h, lambda);
  t.j = ad::div(t.mmd, ad::sqrt(t.variance));
  return t;
}

// --- Tensor forms ----------------------------------------------------------

Tensor gaussian_kernel(const Tensor& x, const Tensor& z, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_kernel: sigma must be positive");
  Tape tape(false);
  return gaussian_gram(ad::pairwise_sqdist(tape.constant(x.flattened()),
                                           tape.constant(z.flattened())),
                       tape.constant(Tensor::scalar(sigma)))
      .value();
}

Tensor deep_kernel(const DeepKernelParams& k, const Tensor& x, const Tensor& z) {
  Tape tape(false);
  const KernelVars kv = bind_kernel(tape, k, false);
  return deep_kernel_gram(kv, embed(kv, tape.constant(x)), embed(kv, tape.constant(z))).value();
}

Tensor h_matrix(const Tensor& kxx, const Tensor& kzz, const Tensor& kxz) {
  Tape tape(false);
  return h_matrix(tape.constant(kxx), tape.constant(kzz), tape.constant(kxz)).value();
}

double mmd_u_squared_gram(const Tensor& kxx, const Tensor& kzz, const Tensor& kxz) {
  if (kxx.shape() != kzz.shape() || kxx.shape() != kxz.shape() || kxx.rank() != 2 ||
      kxx.dim(0) != kxx.dim(1)) {
    throw ShapeError("MMD Gram matrices must share one square shape");
  }
  Tape tape(false);
  return mmd_from_h(h_matrix(tape.constant(kxx), tape.constant(kzz), tape.constant(kxz)))
      .value()
      .item();
}

double mmd_u_squared(const DeepKernelParams& k, const Tensor& x, const Tensor& z) {
  Tape tape(false);
  const KernelVars kv = bind_kernel(tape, k, false);
  return mmd_u_squared(kv, embed(kv, tape.constant(x)), embed(kv, tape.constant(z)))
      .value()
      .item();
}

double variance_hat(const Tensor& h, double lambda) {
  if (h.rank() != 2 || h.dim(0) != h.dim(1)) {
    throw ShapeError("variance_hat expects a square matrix, got " + shape_str(h.shape()));
  }
  Tape tape(false);
  return variance_from_h(tape.constant(h), lambda).value().item();
}

double j_hat(const DeepKernelParams& k, const Tensor& clean, const Tensor& adv, double lambda) {
  Tape tape(false);
  const KernelVars kv = bind_kernel(tape, k, false);
  return j_hat(kv, embed(kv, tape.constant(clean)), embed(kv, tape.constant(adv)), lambda)
      .j.value()
      .item();
}

// --- Detector --------------------------------------------------------------

double mmd_opt(const DetectorModel& model, const Tensor& x, const Tensor& z) {
  const std::size_t b = model.batch_size;
  auto fit = [&](const Tensor& t, Rng& rng) {
    if (t.rows() < b) {
      throw InvalidArgument("MMD-OPT needs batches of " + std::to_string(b) + " samples, got " +
                            std::to_string(t.rows()));
    }
    if (t.rows() == b) return t;
    auto idx = rng.sample_without_replacement(t.rows(), b);
    std::sort(idx.begin(), idx.end());
    return gather_rows(t, idx);
  };
  Rng rng(model.subsample_seed);
  const Tensor xs = fit(x, rng);
  const Tensor zs = fit(z, rng);
  return mmd_u_squared(model.kernel, xs, zs);
}

// --- Kernel optimization ---------------------------------------------------

namespace {

double median_pairwise_distance(const Tensor& rows) {
  const Tensor d = ops::pairwise_sqdist(rows, rows);
  std::vector<double> v;
  for (std::size_t i = 0; i < d.dim(0); ++i)
    for (std::size_t j = i + 1; j < d.dim(1); ++j) v.push_back(std::sqrt(d.at(i, j)));
  if (v.empty()) return 1.0;
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid > 0.0 ? *mid : 1.0;
}

Tensor features_or_identity(const std::shared_ptr<const ClassifierParams>& f, const Tensor& flat) {
  return f ? features(*f, flat) : flat;
}

// J on batches whose embeddings were computed up front.
double j_embedded(const DeepKernelParams& k, const Tensor& cflat, const Tensor& cfeat,
                  const Tensor& aflat, const Tensor& afeat, double lambda) {
  Tape tape(false);
  const KernelVars kv = bind_kernel(tape, k, false);
  return j_hat(kv, embed_constant(tape, cflat, cfeat), embed_constant(tape, aflat, afeat), lambda)
      .j.value()
      .item();
}

double mmd_embedded(const DeepKernelParams& k, const Tensor& xflat, const Tensor& xfeat,
                    const Tensor& zflat, const Tensor& zfeat) {
  Tape tape(false);
  const KernelVars kv = bind_kernel(tape, k, false);
  return mmd_u_squared(kv, embed_constant(tape, xflat, xfeat), embed_constant(tape, zflat, zfeat))
      .value()
      .item();
}

std::span<const std::size_t> chunk(const std::vector<std::size_t>& v, std::size_t k,
                                   std::size_t b) {
  return std::span<const std::size_t>(v.data() + k * b, b);
}

}  // namespace

DeepKernelParams init_kernel(const Tensor& clean,
                             std::shared_ptr<const ClassifierParams> featurizer) {
  const Tensor flat = clean.flattened();
  const double sq = median_pairwise_distance(flat);
  const double sp = median_pairwise_distance(features_or_identity(featurizer, flat));
  return DeepKernelParams::from_values(0.5, sq, sp, std::move(featurizer));
}

KernelTrainResult optimize_kernel(const Tensor& clean, const Tensor& adv,
                                  std::shared_ptr<const ClassifierParams> featurizer,
                                  const KernelTrainConfig& cfg, Rng& rng) {
  const std::size_t b = cfg.batch_size;
  if (b < 2) throw InvalidArgument("optimize_kernel: batch size must be at least 2");
  if (clean.rows() < b || adv.rows() < b) {
    throw InvalidArgument("optimize_kernel: pools of " + std::to_string(clean.rows()) + " clean and " +
                          std::to_string(adv.rows()) + " adversarial samples cannot fill a batch of " +
                          std::to_string(b));
  }
  if (cfg.train_featurizer && !featurizer) {
    throw InvalidArgument("optimize_kernel: featurizer training requested without a featurizer");
  }
  const Tensor cflat = clean.flattened();
  const Tensor aflat = adv.flattened();
  if (cflat.row_size() != aflat.row_size()) {
    throw ShapeError("optimize_kernel: clean rows " + shape_str(clean.shape()) +
                     " and adversarial rows " + shape_str(adv.shape()) + " differ");
  }

  // Hold out monitoring rows from each pool when they can fill a batch.
  auto split_pool = [&](std::size_t n, std::vector<std::size_t>& train,
                        std::vector<std::size_t>& monitor) {
    auto perm = rng.permutation(n);
    const auto m = static_cast<std::size_t>(cfg.monitor_fraction * static_cast<double>(n));
    if (m >= b && n - m >= b) {
      monitor.assign(perm.end() - static_cast<std::ptrdiff_t>(m), perm.end());
      train.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(m));
    } else {
      train = perm;
      monitor = perm;
    }
  };
  std::vector<std::size_t> c_train, c_mon, a_train, a_mon;
  split_pool(cflat.rows(), c_train, c_mon);
  split_pool(aflat.rows(), a_train, a_mon);

  KernelTrainResult result;
  result.kernel = init_kernel(gather_rows(cflat, chunk(c_train, 0, b)), featurizer);
  std::shared_ptr<ClassifierParams> own_featurizer;
  if (cfg.train_featurizer) {
    own_featurizer = std::make_shared<ClassifierParams>(*featurizer);
    result.kernel.featurizer = own_featurizer;
  }

  const Tensor cfeat_all = features_or_identity(featurizer, cflat);
  const Tensor afeat_all = features_or_identity(featurizer, aflat);

  const std::size_t monitor_batches = std::min<std::size_t>(4, std::min(c_mon.size(), a_mon.size()) / b);
  auto monitor_j = [&](const DeepKernelParams& k) {
    double total = 0.0;
    for (std::size_t m = 0; m < monitor_batches; ++m) {
      auto ci = chunk(c_mon, m, b);
      auto ai = chunk(a_mon, m, b);
      const Tensor cf = gather_rows(cflat, ci), af = gather_rows(aflat, ai);
      if (cfg.train_featurizer) {
        total += j_embedded(k, cf, features(*k.featurizer, cf), af, features(*k.featurizer, af),
                            cfg.lambda);
      } else {
        total += j_embedded(k, cf, gather_rows(cfeat_all, ci), af, gather_rows(afeat_all, ai),
                            cfg.lambda);
      }
    }
    return total / static_cast<double>(monitor_batches);
  };

  std::vector<Tensor> params = {Tensor::scalar(result.kernel.raw_beta0),
                                Tensor::scalar(result.kernel.raw_sigma_q),
                                Tensor::scalar(result.kernel.raw_sigma_phi)};
  if (cfg.train_featurizer) {
    params.push_back(own_featurizer->hidden1.weight);
    params.push_back(own_featurizer->hidden1.bias);
    params.push_back(own_featurizer->hidden2.weight);
    params.push_back(own_featurizer->hidden2.bias);
  }
  AdamState adam = AdamState::for_params(params);
  auto sync = [&](DeepKernelParams& k) {
    k.raw_beta0 = params[0][0];
    k.raw_sigma_q = params[1][0];
    k.raw_sigma_phi = params[2][0];
    if (cfg.train_featurizer) {
      own_featurizer->hidden1.weight = params[3];
      own_featurizer->hidden1.bias = params[4];
      own_featurizer->hidden2.weight = params[5];
      own_featurizer->hidden2.bias = params[6];
    }
  };

  result.initial_monitor_j = monitor_j(result.kernel);
  result.best_monitor_j = result.initial_monitor_j;
  DeepKernelParams best = result.kernel;
  if (cfg.train_featurizer) best.featurizer = std::make_shared<ClassifierParams>(*own_featurizer);

  const std::size_t steps = std::min(c_train.size(), a_train.size()) / b;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto c_order = c_train;
    auto a_order = a_train;
    rng.shuffle(std::span<std::size_t>(c_order));
    rng.shuffle(std::span<std::size_t>(a_order));
    double j_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      auto ci = chunk(c_order, s, b);
      auto ai = chunk(a_order, s, b);
      Tape tape;
      const KernelVars kv = bind_kernel(tape, result.kernel, true, cfg.train_featurizer);
      Embedding ce, ae;
      if (cfg.train_featurizer) {
        ce = embed(kv, tape.constant(gather_rows(cflat, ci)));
        ae = embed(kv, tape.constant(gather_rows(aflat, ai)));
      } else {
        ce = embed_constant(tape, gather_rows(cflat, ci), gather_rows(cfeat_all, ci));
        ae = embed_constant(tape, gather_rows(aflat, ai), gather_rows(afeat_all, ai));
      }
      const PowerTerms terms = j_hat(kv, ce, ae, cfg.lambda);
      tape.backward(terms.j);
      std::vector<Tensor> grads = {ops::scale(tape.grad(kv.raw_beta0), -1.0),
                                   ops::scale(tape.grad(kv.raw_sigma_q), -1.0),
                                   ops::scale(tape.grad(kv.raw_sigma_phi), -1.0)};
      if (cfg.train_featurizer) {
        const ClassifierVars& fv = *kv.featurizer;
        for (const Var* v : {&fv.w1, &fv.b1, &fv.w2, &fv.b2})
          grads.push_back(ops::scale(tape.grad(*v), -1.0));
      }
      adam_step(params, grads, adam, cfg.lr);
      sync(result.kernel);
      j_sum += terms.j.value().item();
    }
    result.train_trajectory.push_back(steps ? j_sum / static_cast<double>(steps) : 0.0);
    const double mj = monitor_j(result.kernel);
    result.monitor_trajectory.push_back(mj);
    if (mj > result.best_monitor_j) {
      result.best_monitor_j = mj;
      result.best_epoch = epoch;
      best = result.kernel;
      if (cfg.train_featurizer) best.featurizer = std::make_shared<ClassifierParams>(*own_featurizer);
    }
  }
  result.kernel = best;
  return result;
}

CalibrationResult calibrate_threshold(const DeepKernelParams& kernel, const Tensor& pool,
                                      std::size_t batch_size, double far, std::size_t trials,
                                      Rng& rng, const Tensor* reference) {
  if (batch_size < 2) throw InvalidArgument("calibrate_threshold: batch size must be at least 2");
  if (reference && reference->rows() != batch_size) {
    throw ShapeError("calibrate_threshold: reference has " + std::to_string(reference->rows()) +
                     " rows, batch size is " + std::to_string(batch_size));
  }
  if (pool.rows() < (reference ? 1 : 2) * batch_size) {
    throw InvalidArgument("calibrate_threshold: pool of " + std::to_string(pool.rows()) +
                          " samples cannot supply two disjoint batches of " +
                          std::to_string(batch_size));
  }
  if (!(far > 0.0 && far < 1.0)) throw InvalidArgument("calibrate_threshold: FAR must be in (0, 1)");
  if (trials < 1) throw InvalidArgument("calibrate_threshold: need at least one trial");
  const Tensor flat = pool.flattened();
  const Tensor feat = features_or_identity(kernel.featurizer, flat);

  CalibrationResult out;
  out.statistics.reserve(trials);
  if (reference) {
    const Tensor rflat = reference->flattened();
    const Tensor rfeat = features_or_identity(kernel.featurizer, rflat);
    for (std::size_t t = 0; t < trials; ++t) {
      auto zi = rng.sample_without_replacement(flat.rows(), batch_size);
      std::sort(zi.begin(), zi.end());
      out.statistics.push_back(
          mmd_embedded(kernel, rflat, rfeat, gather_rows(flat, zi), gather_rows(feat, zi)));
    }
  }
  for (std::size_t t = 0; !reference && t < trials; ++t) {
    const auto idx = rng.sample_without_replacement(flat.rows(), 2 * batch_size);
    auto xi = chunk(idx, 0, batch_size);
    auto zi = chunk(idx, 1, batch_size);
    out.statistics.push_back(mmd_embedded(kernel, gather_rows(flat, xi), gather_rows(feat, xi),
                                          gather_rows(flat, zi), gather_rows(feat, zi)));
  }
  std::vector<double> sorted = out.statistics;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil((1.0 - far) * static_cast<double>(trials) - 1e-9));
  out.threshold = sorted[std::clamp<std::size_t>(rank, 1, trials) - 1];
  std::size_t alarms = 0;
  for (double s : out.statistics) alarms += !rules_clean(s, out.threshold);
  out.report.far_target = far;
  out.report.trials = trials;
  out.report.far_estimate = static_cast<double>(alarms) / static_cast<double>(trials);
  return out;
}

void store_detector(ModelContainer& c, const DetectorModel& m) {
  c.put("kernel.raw_beta0", Tensor::scalar(m.kernel.raw_beta0));
  c.put("kernel.raw_sigma_q", Tensor::scalar(m.kernel.raw_sigma_q));
  c.put("kernel.raw_sigma_phi", Tensor::scalar(m.kernel.raw_sigma_phi));
  c.set_meta("threshold", format_double(m.threshold));
  c.set_meta("batch_size", std::to_string(m.batch_size));
  c.set_meta("lambda", format_double(m.lambda));
  c.set_meta("far_target", format_double(m.calibration.far_target));
  c.set_meta("far_estimate", format_double(m.calibration.far_estimate));
  c.set_meta("calibration_trials", std::to_string(m.calibration.trials));
  c.set_meta("subsample_seed", std::to_string(m.subsample_seed));
  if (m.owns_featurizer && m.kernel.featurizer) {
    store_classifier(c, *m.kernel.featurizer, "kernel.featurizer");
    c.set_meta("kernel_featurizer", "private");
  } else {
    c.set_meta("kernel_featurizer", m.kernel.featurizer ? "classifier" : "identity");
  }
}

DetectorModel load_detector(const ModelContainer& c,
                            std::shared_ptr<const ClassifierParams> classifier) {
  DetectorModel m;
  m.kernel.raw_beta0 = c.get("kernel.raw_beta0").item();
  m.kernel.raw_sigma_q = c.get("kernel.raw_sigma_q").item();
  m.kernel.raw_sigma_phi = c.get("kernel.raw_sigma_phi").item();
  const std::string featurizer = c.meta("kernel_featurizer").value_or("classifier");
  if (featurizer == "private") {
    m.kernel.featurizer =
        std::make_shared<ClassifierParams>(load_classifier(c, "kernel.featurizer"));
    m.owns_featurizer = true;
  } else if (featurizer == "classifier") {
    if (!classifier) throw InvalidArgument("detector needs the classifier as its featurizer");
    m.kernel.featurizer = std::move(classifier);
  }
  m.threshold = c.meta_double("threshold");
  m.batch_size = static_cast<std::size_t>(c.meta_double("batch_size"));
  m.lambda = c.meta_double("lambda");
  m.calibration.far_target = c.meta_double("far_target");
  if (c.meta("far_estimate")) m.calibration.far_estimate = c.meta_double("far_estimate");
  if (c.meta("calibration_trials"))
    m.calibration.trials = static_cast<std::size_t>(c.meta_double("calibration_trials"));
  if (c.meta("subsample_seed"))
    m.subsample_seed = std::stoull(c.require_meta("subsample_seed"));
  if (!std::isfinite(m.threshold)) throw FormatError("detector threshold is not finite");
  if (!(m.lambda > 0.0)) throw FormatError("detector lambda must be positive");
  if (m.batch_size < 2) throw FormatError("detector batch size must be at least 2");
  return m;
}

}  // namespace ddad

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
#include <limits>

#include "ddad/defense.hpp"
#include "ddad/errors.hpp"
#include "ddad/ops.hpp"
#include "oracles.hpp"

using namespace ddad;

namespace {

constexpr std::size_t kB = 20;

struct Fixture {
  ImageBatch train;
  ImageBatch test;
  DefensePipeline pipeline;
  ClassifierParams classifier_before;
  DenoiserTrainResult denoiser;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture fx;
    Rng rng(41);
    fx.train = synth_digits(rng, 800, 4, 0.05);
    fx.test = synth_digits(rng, 200, 4, 0.05);
    const ImageBatch val = synth_digits(rng, 200, 4, 0.05);
    auto cls = std::make_shared<const ClassifierParams>(
        train_classifier(fx.train, {15, 1e-3, 64}, rng).params);
    fx.classifier_before = *cls;
    DefensePipeline& p = fx.pipeline;
    p.classifier = cls;
    p.detector.kernel = init_kernel(fx.train.data, cls);
    p.detector.batch_size = kB;
    p.reference = draw_reference(val.data, kB, 3);
    p.detector.threshold =
        calibrate_threshold(p.detector.kernel, val.data, kB, 0.05, 100, rng, &p.reference).threshold;
    DenoiserTrainConfig dc;
    dc.epochs = 4;
    dc.batch_size = kB;
    dc.attack.iterations = 3;
    fx.denoiser = train_denoiser(fx.train, p.detector, *cls, dc, rng);
    p.denoiser = fx.denoiser.params;
    return fx;
  }();
  return f;
}

}  // namespace

TEST_CASE("learning-rate milestones divide by ten") {
  const std::vector<std::size_t> m{45, 60};
  CHECK(scheduled_lr(1e-3, m, 0) == 1e-3);
  CHECK(scheduled_lr(1e-3, m, 44) == 1e-3);
  CHECK(scheduled_lr(1e-3, m, 45) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(1e-3, m, 60) == doctest::Approx(1e-5));
}

TEST_CASE("denoiser config defaults") {
  const DenoiserTrainConfig c;
  CHECK(c.alpha == 1e-2);
  CHECK(c.noise.mu == 0.0);
  CHECK(c.noise.sigma == 0.25);
  CHECK(c.epochs == 60);
  CHECK(c.lr == 1e-3);
  CHECK(c.decay_epochs == std::vector<std::size_t>{45, 60});
}

TEST_CASE("denoiser loss gradient matches finite differences in every parameter tensor") {
  const Fixture& f = fixture();
  Rng rng(5);
  const auto& det = f.pipeline.detector;
  for (int trial = 0; trial < 20; ++trial) {
    const auto ci = rng.sample_without_replacement(f.train.size(), 8);
    const ImageBatch clean = f.train.subset(ci);
    const Tensor noisy = ops::add(clean.data, sample_gaussian(rng, clean.data.shape(), 0, 0.05));
    DenoiserParams theta = init_denoiser(rng, 64);
    const double alpha = 0.3;

    auto loss_at = [&](const DenoiserParams& p, Tape& tape, bool trainable, DenoiserVars* out) {
      const KernelVars kv = bind_kernel(tape, det.kernel, false);
      const ClassifierVars cv = bind_classifier(tape, *f.pipeline.classifier, false);
      const DenoiserVars dv = bind_denoiser(tape, p, trainable);
      if (out) *out = dv;
      return denoiser_loss(kv, cv, dv, embed(kv, tape.constant(clean.data)),
                           tape.constant(noisy), clean.labels, alpha);
    };
    Tape tape;
    DenoiserVars dv;
    tape.backward(loss_at(theta, tape, true, &dv));
    const std::vector<Var> vars{dv.w1, dv.b1, dv.w2, dv.b2};
    const auto tensors = theta.tensors();
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      const Tensor g = tape.grad(vars[t]);
      // A random subset of coordinates keeps the check fast.
      const auto coords = rng.sample_without_replacement(tensors[t]->numel(), 6);
      Tensor ad_sub({coords.size()}), fd_sub({coords.size()});
      for (std::size_t c = 0; c < coords.size(); ++c) {
        const std::size_t i = coords[c];
        const double keep = (*tensors[t])[i];
        auto eval = [&](double v) {
          (*tensors[t])[i] = v;
          Tape t2(false);
          const double r = loss_at(theta, t2, false, nullptr).value().item();
          (*tensors[t])[i] = keep;
          return r;
        };
        fd_sub[c] = (eval(keep + 1e-6) - eval(keep - 1e-6)) / 2e-6;
        ad_sub[c] = g[i];
      }
      // Scale by the whole tensor's gradient so zero coordinates are judged fairly.
      double scale = 1e-300;
      for (double v : g.data()) scale = std::max(scale, std::abs(v));
      double worst = 0.0;
      for (std::size_t c = 0; c < coords.size(); ++c) worst = std::max(worst, std::abs(ad_sub[c] - fd_sub[c]));
      CHECK(worst / scale <= 1e-5);
    }
  }
}

TEST_CASE("denoiser training leaves the classifier untouched and lowers the loss") {
  const Fixture& f = fixture();
  CHECK(f.pipeline.classifier->bitwise_equal(f.classifier_before));
  const auto& traj = f.denoiser.loss_trajectory;
  REQUIRE(traj.size() == 4);
  CHECK(traj.back() <= traj.front());
}

TEST_CASE("gate: identical batch is clean, clean verdicts equal bare predictions") {
  const Fixture& f = fixture();
  const DefensePipeline& p = f.pipeline;
  const DefenseResult same = defend_batch(p, p.reference);
  CHECK(same.verdict.statistic == 0.0);
  CHECK_FALSE(same.verdict.adversarial);

  Rng rng(6);
  int clean_seen = 0;
  for (int t = 0; t < 30; ++t) {
    const auto idx = rng.sample_without_replacement(f.test.size(), kB);
    const Tensor batch = gather_rows(f.test.data, idx);
    const DefenseResult r = defend_batch(p, batch);
    CHECK(r.labels.size() == kB);
    if (!r.verdict.adversarial) {
      ++clean_seen;
      CHECK(r.labels == predict(*p.classifier, batch));
    }
  }
  CHECK(clean_seen > 0);
  CHECK_THROWS_AS(defend_batch(p, gather_rows(f.test.data, std::vector<std::size_t>{0, 1, 2})), ShapeError);
}

TEST_CASE("gate: raising the threshold never lowers the clean-verdict rate") {
  const Fixture& f = fixture();
  DefensePipeline p = f.pipeline;
  Rng rng(7);
  std::vector<Tensor> batches;
  for (int t = 0; t < 20; ++t)
    batches.push_back(gather_rows(f.test.data, rng.sample_without_replacement(f.test.size(), kB)));
  const Tensor adv = ops::clip(ops::add_scalar(batches[0], 0.1), 0, 1);
  batches.push_back(adv);
  int prev = -1;
  for (double t : {-1.0, 0.0, 1e-4, 1e-3, 1e-2, 1.0}) {
    p.detector.threshold = t;
    int clean = 0;
    for (const auto& b : batches) clean += !defend_batch(p, b).verdict.adversarial;
    CHECK(clean >= prev);
    prev = clean;
  }
}

TEST_CASE("always-denoise routing reports no statistic") {
  DefensePipeline p = fixture().pipeline;
  p.routing = Routing::kAlwaysDenoise;
  const DefenseResult r = defend_batch(p, p.reference);
  CHECK(r.verdict.adversarial);
  CHECK(std::isnan(r.verdict.statistic));
  CHECK(r.labels == predict(*p.classifier, denoise(p.denoiser, p.reference)));
}

TEST_CASE("reference draws are deterministic and resampling needs a pool") {
  const Fixture& f = fixture();
  CHECK(draw_reference(f.test.data, 10, 4).bitwise_equal(draw_reference(f.test.data, 10, 4)));
  DefensePipeline p = f.pipeline;
  p.resample_reference = true;
  p.reference_pool = Tensor();
  CHECK_THROWS(p.validate());
}

TEST_CASE("batch gate: counting and order") {
  BatchGate gate(3);
  auto sample = [](double v) { return Tensor({1, 2, 2}, v); };
  CHECK_FALSE(gate.push(sample(1)).has_value());
  CHECK_FALSE(gate.push(sample(2)).has_value());
  const auto batch = gate.push(sample(3));
  REQUIRE(batch.has_value());
  CHECK(batch->shape() == Shape{3, 1, 2, 2});
  CHECK((*batch)[0] == 1.0);
  CHECK((*batch)[4] == 2.0);
  CHECK((*batch)[8] == 3.0);
  CHECK(gate.pending() == 0);

  BatchGate two(4);
  int emitted = 0;
  for (int i = 0; i < 8; ++i) emitted += two.push(sample(i)).has_value();
  CHECK(emitted == 2);
  CHECK(two.pending() == 0);
  CHECK_THROWS(BatchGate(1));
  CHECK_THROWS(two.push(Tensor({2, 2}, 0.0)));
}

TEST_CASE("conservation: one prediction per fuzzed sample") {
  const Fixture& f = fixture();
  Rng rng(8);
  BatchGate gate(kB);
  std::size_t pushed = 0, predicted = 0;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor s = sample_uniform(rng, {1, 8, 8}, 0.0, 1.0);
    if (rng.below(2)) {
      const auto row = f.test.data.row(rng.below(f.test.size()));
      s = Tensor({1, 8, 8}, std::vector<double>(row.begin(), row.end()));
    }
    ++pushed;
    if (auto batch = gate.push(s)) predicted += defend_batch(f.pipeline, *batch).labels.size();
  }
  CHECK(predicted + gate.pending() == pushed);
  CHECK(gate.pending() == n % kB);
}

TEST_CASE("mixed curve endpoints equal the pure metrics") {
  const Fixture& f = fixture();
  EvalConfig cfg;
  cfg.trials = 2;
  cfg.seed = 9;
  cfg.attack.attack = {Norm::kLinf, 0.1, 0.02, 3, 2, false};
  cfg.attack.threshold = f.pipeline.detector.threshold;
  const auto curve = eval_mixed(f.pipeline, f.test, {0.0, 0.5, 1.0}, cfg);
  const PipelineMetrics m = evaluate_pipeline(f.pipeline, f.test, cfg);
  REQUIRE(curve.size() == 3);
  CHECK(curve.front().accuracy == m.defended_clean_accuracy);
  CHECK(curve.back().accuracy == m.defended_robust_accuracy);
  CHECK(curve.front().std == m.defended_clean_std);
  CHECK(curve.back().std == m.defended_robust_std);
  CHECK(m.trials == 2);
}

TEST_CASE("batch-size sweep rejects singletons") {
  const Fixture& f = fixture();
  EvalConfig cfg;
  cfg.trials = 2;
  CHECK_THROWS_AS(eval_batch_size(f.pipeline, f.test, f.test.data, {1, 10}, 20, cfg), InvalidArgument);
  const auto pts = eval_batch_size(f.pipeline, f.test, f.test.data, {5, 10}, 20, cfg);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].x == 5.0);
  CHECK(pts[1].trials == 2);
}

TEST_CASE("report formats") {
  const std::string csv = curve_csv("proportion", {{0.0, 1.0, 0.0, 3}, {0.5, 0.75, 0.25, 3}});
  CHECK(csv == "proportion,accuracy,std\n0,1,0\n0.5,0.75,0.25\n");
  const std::string jl = ablation_jsonl({{"full", 1.0, 0.0, 0.5, 0.1}});
  CHECK(jl.find("\"configuration\":\"full\"") != std::string::npos);
  CHECK(jl.back() == '\n');
}

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

#include "ddad/models.hpp"

#include <algorithm>
#include <cmath>

#include "ddad/errors.hpp"
#include "ddad/ops.hpp"
#include "ddad/optim.hpp"

namespace ddad {

Affine make_affine(Rng& rng, std::size_t in, std::size_t out) {
  // He-style uniform init for ReLU stacks.
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  Affine a;
  a.weight = sample_uniform(rng, {in, out}, -bound, bound);
  a.bias = Tensor::zeros({1, out});
  return a;
}

std::vector<Tensor*> ClassifierParams::tensors() {
  return {&hidden1.weight, &hidden1.bias, &hidden2.weight,
          &hidden2.bias,   &head.weight,  &head.bias};
}

std::vector<const Tensor*> ClassifierParams::tensors() const {
  return {&hidden1.weight, &hidden1.bias, &hidden2.weight,
          &hidden2.bias,   &head.weight,  &head.bias};
}

bool ClassifierParams::bitwise_equal(const ClassifierParams& other) const {
  auto a = tensors();
  auto b = other.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i]->bitwise_equal(*b[i])) return false;
  }
  return true;
}

ClassifierParams init_classifier(Rng& rng, std::size_t input_dim, std::size_t classes) {
  if (classes < 2) throw InvalidArgument("classifier needs at least 2 classes");
  ClassifierParams p;
  p.hidden1 = make_affine(rng, input_dim, kClassifierHidden);
  p.hidden2 = make_affine(rng, kClassifierHidden, kFeatureDim);
  p.head = make_affine(rng, kFeatureDim, classes);
  return p;
}

namespace {

Var bind(Tape& tape, const Tensor& t, bool trainable) {
  return trainable ? tape.leaf(t) : tape.constant(t);
}

Var affine(const Var& x, const Var& w, const Var& b) { return ad::add(ad::matmul(x, w), b); }

Var flatten(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() == 2) return x;
  return ad::reshape(x, {s[0], x.value().row_size()});
}

void check_input(const Tensor& batch, std::size_t dim, const char* who) {
  if (batch.rank() < 2 || batch.row_size() != dim) {
    throw ShapeError(std::string(who) + ": expected rows of " + std::to_string(dim) +
                     " values, got shape " + shape_str(batch.shape()));
  }
}

}  // namespace

ClassifierVars bind_classifier(Tape& tape, const ClassifierParams& p, bool trainable) {
  return {bind(tape, p.hidden1.weight, trainable), bind(tape, p.hidden1.bias, trainable),
          bind(tape, p.hidden2.weight, trainable), bind(tape, p.hidden2.bias, trainable),
          bind(tape, p.head.weight, trainable),    bind(tape, p.head.bias, trainable)};
}

Var classifier_features(const ClassifierVars& v, const Var& x) {
  const Var flat = flatten(x);
  if (flat.value().dim(1) != v.w1.value().dim(0)) {
    throw ShapeError("classifier input has " + std::to_string(flat.value().dim(1)) +
                     " features, model expects " + std::to_string(v.w1.value().dim(0)));
  }
  const Var h1 = ad::relu(affine(flat, v.w1, v.b1));
  return ad::relu(affine(h1, v.w2, v.b2));
}

Var classifier_head(const ClassifierVars& v, const Var& features) {
  return affine(features, v.w3, v.b3);
}

Var classifier_logits(const ClassifierVars& v, const Var& x) {
  return classifier_head(v, classifier_features(v, x));
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw ShapeError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

Classification classify(const ClassifierParams& p, const Tensor& batch) {
  check_input(batch, p.input_dim(), "classify");
  Tape tape(false);
  const ClassifierVars v = bind_classifier(tape, p, false);
  Classification out;
  out.logits = classifier_logits(v, tape.constant(batch.flattened())).value();
  out.labels.resize(out.logits.dim(0));
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    auto r = out.logits.row(i);
    out.labels[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

std::vector<int> predict(const ClassifierParams& p, const Tensor& batch) {
  return classify(p, batch).labels;
}

Tensor features(const ClassifierParams& p, const Tensor& batch) {
  check_input(batch, p.input_dim(), "features");
  Tape tape(false);
  const ClassifierVars v = bind_classifier(tape, p, false);
  return classifier_features(v, tape.constant(batch.flattened())).value();
}

TrainedClassifier train_classifier(const ImageBatch& train, const ClassifierTrainConfig& cfg,
                                   Rng& rng) {
  if (!train.has_labels()) throw InvalidArgument("train_classifier: labels required");
  std::vector<int> seen(train.labels);
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  if (train.classes < 2 || seen.size() < 2) {
    throw InvalidArgument("train_classifier: need at least 2 classes, got " +
                          std::to_string(seen.size()));
  }
  if (cfg.batch_size == 0 || cfg.epochs == 0) {
    throw InvalidArgument("train_classifier: epochs and batch size must be positive");
  }
  TrainedClassifier result;
  result.params = init_classifier(rng, train.dim(), train.classes);
  std::vector<Tensor> params;
  for (const Tensor* t : std::as_const(result.params).tensors()) params.push_back(*t);
  AdamState adam = AdamState::for_params(params);
  const Tensor flat = train.data.flattened();
  const std::size_t n = train.size();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> y;
      for (auto i : idx) y.push_back(train.labels[i]);
      Tape tape;
      ClassifierVars v{tape.leaf(params[0]), tape.leaf(params[1]), tape.leaf(params[2]),
                       tape.leaf(params[3]), tape.leaf(params[4]), tape.leaf(params[5])};
      const Var x = tape.constant(gather_rows(flat, idx));
      const Var loss = ad::cross_entropy(classifier_logits(v, x), y);
      tape.backward(loss);
      const std::vector<Tensor> grads = {tape.grad(v.w1), tape.grad(v.b1), tape.grad(v.w2),
                                         tape.grad(v.b2), tape.grad(v.w3), tape.grad(v.b3)};
      adam_step(params, grads, adam, cfg.lr);
      loss_sum += loss.value().item();
      ++batches;
    }
    result.loss_trajectory.push_back(loss_sum / static_cast<double>(batches));
  }
  auto dst = result.params.tensors();
  for (std::size_t k = 0; k < dst.size(); ++k) *dst[k] = params[k];
  result.train_accuracy = accuracy(predict(result.params, train.data), train.labels);
  return result;
}

std::vector<Tensor*> DenoiserParams::tensors() {
  return {&hidden.weight, &hidden.bias, &out.weight, &out.bias};
}

std::vector<const Tensor*> DenoiserParams::tensors() const {
  return {&hidden.weight, &hidden.bias, &out.weight, &out.bias};
}

DenoiserParams init_denoiser(Rng& rng, std::size_t input_dim) {
  DenoiserParams p;
  p.hidden = make_affine(rng, input_dim, kDenoiserHidden);
  p.out.weight = Tensor::zeros({kDenoiserHidden, input_dim});
  p.out.bias = Tensor::zeros({1, input_dim});
  return p;
}

DenoiserVars bind_denoiser(Tape& tape, const DenoiserParams& p, bool trainable) {
  return {bind(tape, p.hidden.weight, trainable), bind(tape, p.hidden.bias, trainable),
          bind(tape, p.out.weight, trainable), bind(tape, p.out.bias, trainable)};
}

Var denoiser_forward(const DenoiserVars& v, const Var& x) {
  const Var flat = flatten(x);
  const Var h = ad::relu(affine(flat, v.w1, v.b1));
  const Var residual = affine(h, v.w2, v.b2);
  return ad::clip(ad::add(flat, residual), 0.0, 1.0);
}

Tensor denoise(const DenoiserParams& p, const Tensor& batch) {
  check_input(batch, p.input_dim(), "denoise");
  Tape tape(false);
  const DenoiserVars v = bind_denoiser(tape, p, false);
  return denoiser_forward(v, tape.constant(batch.flattened())).value().reshaped(batch.shape());
}

namespace {

const char* const kClassifierNames[] = {"hidden1.weight", "hidden1.bias", "hidden2.weight",
                                        "hidden2.bias",   "head.weight",  "head.bias"};
const char* const kDenoiserNames[] = {"hidden.weight", "hidden.bias", "out.weight", "out.bias"};

}  // namespace

void store_classifier(ModelContainer& c, const ClassifierParams& p, const std::string& prefix) {
  auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) c.put(prefix + "." + kClassifierNames[k], *ts[k]);
}

ClassifierParams load_classifier(const ModelContainer& c, const std::string& prefix) {
  ClassifierParams p;
  auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) *ts[k] = c.get(prefix + "." + kClassifierNames[k]);
  if (p.hidden1.out() != p.hidden2.in() || p.hidden2.out() != p.head.in() ||
      p.hidden1.bias.numel() != p.hidden1.out() || p.hidden2.bias.numel() != p.hidden2.out() ||
      p.head.bias.numel() != p.head.out()) {
    throw FormatError("classifier layer shapes do not chain");
  }
  return p;
}

void store_denoiser(ModelContainer& c, const DenoiserParams& p) {
  auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) c.put(std::string("denoiser.") + kDenoiserNames[k], *ts[k]);
}

DenoiserParams load_denoiser(const ModelContainer& c) {
  DenoiserParams p;
  auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) *ts[k] = c.get(std::string("denoiser.") + kDenoiserNames[k]);
  if (p.hidden.out() != p.out.in() || p.out.out() != p.hidden.in()) {
    throw FormatError("denoiser layer shapes do not chain");
  }
  return p;
}

}  // namespace ddad

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
#include <span>
#include <string>
#include <vector>

#include "ddad/autodiff.hpp"
#include "ddad/dataio.hpp"
#include "ddad/rng.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

/// Affine map y = x W + b with W [in, out] and b [1, out].
struct Affine {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

Affine make_affine(Rng& rng, std::size_t in, std::size_t out);

inline constexpr std::size_t kClassifierHidden = 64;
inline constexpr std::size_t kFeatureDim = 32;
inline constexpr std::size_t kDenoiserHidden = 128;

/// flatten -> affine(d, 64) -> ReLU -> affine(64, 32) -> ReLU -> affine(32, K).
/// The first two layers double as the featurizer of the deep kernel.
struct ClassifierParams {
  Affine hidden1;
  Affine hidden2;
  Affine head;

  std::size_t input_dim() const { return hidden1.in(); }
  std::size_t classes() const { return head.out(); }
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  bool bitwise_equal(const ClassifierParams& other) const;
};

ClassifierParams init_classifier(Rng& rng, std::size_t input_dim, std::size_t classes);

/// Classifier weights bound to a tape, either as constants (frozen) or leaves.
struct ClassifierVars {
  Var w1, b1, w2, b2, w3, b3;
};

ClassifierVars bind_classifier(Tape& tape, const ClassifierParams& p, bool trainable);
/// Penultimate activations [n, 32]; `x` is flattened [n, d].
Var classifier_features(const ClassifierVars& v, const Var& x);
Var classifier_head(const ClassifierVars& v, const Var& features);
Var classifier_logits(const ClassifierVars& v, const Var& x);

struct ClassifierTrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 64;
};

struct TrainedClassifier {
  ClassifierParams params;
  double train_accuracy = 0.0;
  std::vector<double> loss_trajectory;
};

/// Minimizes mean cross-entropy with Adam over shuffled minibatches.
TrainedClassifier train_classifier(const ImageBatch& train, const ClassifierTrainConfig& cfg,
                                   Rng& rng);

struct Classification {
  Tensor logits;  // [n, K]
  std::vector<int> labels;
};

Classification classify(const ClassifierParams& p, const Tensor& batch);
std::vector<int> predict(const ClassifierParams& p, const Tensor& batch);
/// [n, 32] penultimate features.
Tensor features(const ClassifierParams& p, const Tensor& batch);
double accuracy(std::span<const int> predicted, std::span<const int> truth);

/// Residual denoiser: clip(x + affine(relu(affine(x))), 0, 1).
struct DenoiserParams {
  Affine hidden;
  Affine out;

  std::size_t input_dim() const { return hidden.in(); }
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// Random first layer, zero output layer: the initial residual is exactly 0.
DenoiserParams init_denoiser(Rng& rng, std::size_t input_dim);

struct DenoiserVars {
  Var w1, b1, w2, b2;
};

DenoiserVars bind_denoiser(Tape& tape, const DenoiserParams& p, bool trainable);
/// `x` is flattened [n, d] and may hold values outside [0, 1].
Var denoiser_forward(const DenoiserVars& v, const Var& x);

/// Same shape as `batch`; every output pixel in [0, 1].
Tensor denoise(const DenoiserParams& p, const Tensor& batch);

// Container names: classifier.* and denoiser.*
void store_classifier(ModelContainer& c, const ClassifierParams& p,
                      const std::string& prefix = "classifier");
ClassifierParams load_classifier(const ModelContainer& c,
                                 const std::string& prefix = "classifier");
void store_denoiser(ModelContainer& c, const DenoiserParams& p);
DenoiserParams load_denoiser(const ModelContainer& c);

}  // namespace ddad

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
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ddad {

enum class DatasetKind { kSynthDigits, kSynthBlobs, kIdx };
enum class ThresholdMode { kCalibrate, kFixed };
enum class AttackKind { kAdaptive, kPgd, kFgsm };

/// Fully resolved run configuration. Defaults follow the published training
/// and evaluation settings wherever those exist.
struct RunConfig {
  std::uint64_t seed = 0;

  DatasetKind dataset = DatasetKind::kSynthDigits;
  std::string idx_images;
  std::string idx_labels;
  std::size_t digits_n = 4000;
  std::size_t digits_classes = 4;
  double digits_noise = 0.1;
  std::size_t blobs_n = 500;
  std::size_t blobs_dim = 2;
  double blobs_delta = 3.0;
  double train_fraction = 0.6;
  double validation_fraction = 0.15;

  std::size_t batch_size = 100;

  std::size_t classifier_epochs = 30;
  double classifier_lr = 1e-3;
  std::size_t classifier_batch = 64;

  std::size_t kernel_epochs = 200;
  double kernel_lr = 2e-4;
  double lambda = 1e-8;
  bool kernel_train_featurizer = false;

  std::size_t denoiser_epochs = 60;
  double denoiser_lr = 1e-3;
  std::vector<std::size_t> decay_epochs{45, 60};
  double alpha = 1e-2;
  double noise_mu = 0.0;
  double noise_sigma = 0.25;
  std::size_t train_attack_iterations = 10;
  double train_attack_step = 0.025;

  AttackKind attack = AttackKind::kAdaptive;
  std::string norm = "linf";
  double epsilon = 0.1;
  double step_size = 0.01;
  std::size_t pgd_iterations = 200;
  std::size_t eot = 20;
  bool random_start = false;
  /// Adaptive attacker measures MMD against S_V rather than its own batch.
  bool attack_against_reference = false;

  ThresholdMode threshold_mode = ThresholdMode::kCalibrate;
  double far = 0.05;
  double threshold = 0.05;
  std::size_t calibration_trials = 200;
  bool resample_reference = false;

  std::size_t eval_trials = 10;
  std::vector<double> mixed_proportions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::size_t> eval_batch_sizes{10, 25, 50, 100};
  std::vector<std::string> ablations{"no_noise", "no_gate", "denoiser_only"};

  std::string defend_images;
  std::string defend_labels;

  std::size_t verify_domains = 50;
  std::size_t verify_points = 8;
  std::string verify_mode = "all";
  std::size_t verify_samples = 256;

  std::string out_dir = "out";

  /// Notes gathered while parsing (duplicate keys); echoed as comments.
  std::vector<std::string> warnings;

  bool operator==(const RunConfig& other) const;
  /// Range and consistency checks shared by the parser and programmatic use.
  void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, malformed
/// values and a missing `dataset` line raise ConfigError with the line number.
/// A repeated key keeps its last value and records a warning.
RunConfig parse_config_text(std::string_view text);
RunConfig parse_config(const std::filesystem::path& path);

/// Canonical `key = value` rendering; parse_config_text(echo) == config.
std::string echo_config(const RunConfig& config);

std::string dataset_name(DatasetKind k);
std::string attack_name(AttackKind k);

}  // namespace ddad

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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddad/config.hpp"
#include "ddad/dataio.hpp"
#include "ddad/defense.hpp"

namespace ddad {

/// Subcommands in pipeline order.
const std::vector<std::string>& subcommand_names();
bool is_subcommand(const std::string& name);

struct RunSummary {
  std::string subcommand;
  /// Files written under the output directory, relative names.
  std::vector<std::string> artifacts;
  /// Headline numbers, also recorded in the manifest.
  std::map<std::string, double> metrics;
  double wall_seconds = 0.0;
};

/// Runs one subcommand against `cfg.out_dir`. Missing upstream artifacts raise
/// MissingArtifact naming the subcommand that produces them.
RunSummary run_subcommand(const RunConfig& cfg, const std::string& name);

/// Train/reference/validation/test slices of the configured image corpus.
struct Corpus {
  ImageBatch train;
  ImageBatch reference;
  ImageBatch validation;
  ImageBatch test;
};

Corpus load_corpus(const RunConfig& cfg);

/// Assembles the deployed pipeline from the classifier, detector and denoiser
/// containers in `cfg.out_dir`.
DefensePipeline load_defense_pipeline(const RunConfig& cfg);

}  // namespace ddad

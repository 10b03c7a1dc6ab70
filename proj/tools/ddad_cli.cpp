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

// Command-line front end. One subcommand per invocation.
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ddad/ddad.h"

namespace {

int report(ddad_status s) {
  std::fprintf(stderr, "ddad: %s: %s\n", ddad_status_name(s), ddad_last_error());
  return ddad_exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> names;
  for (size_t i = 0; i < ddad_subcommand_count(); ++i) names.emplace_back(ddad_subcommand_name(i));

  CLI::App app{"Detect-then-denoise defense against adversarial batches"};
  app.set_version_flag("--version", ddad_version());
  std::string subcommand, config_path, out_dir;
  uint64_t seed = 0;
  app.add_option("subcommand", subcommand, "Stage to run")
      ->required()
      ->check(CLI::IsMember(names));
  app.add_option("--config", config_path, "key = value configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out_dir, "Overrides the output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  ddad_config* cfg = nullptr;
  if (ddad_status s = ddad_config_parse_file(config_path.c_str(), &cfg); s != DDAD_OK) {
    return report(s);
  }
  if (*seed_opt) ddad_config_set_seed(cfg, seed);
  if (!out_dir.empty()) ddad_config_set_out_dir(cfg, out_dir.c_str());

  double seconds = 0.0;
  const ddad_status s = ddad_run_command(cfg, subcommand.c_str(), &seconds);
  ddad_config_free(cfg);
  if (s != DDAD_OK) return report(s);
  std::fprintf(stderr, "ddad: %s finished in %.1f s\n", subcommand.c_str(), seconds);
  return 0;
}

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

#include "ddad/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "ddad/dataio.hpp"
#include "ddad/errors.hpp"

namespace ddad {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Field parsers throw plain InvalidArgument; the caller attaches the line.
std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw InvalidArgument("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw InvalidArgument("expected a finite number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& v, F conv) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) out.push_back(conv(item));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }
std::string size_str(std::size_t v) { return std::to_string(v); }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define DDAD_SIZE(name) \
  {#name, [](const RunConfig& c) { return size_str(c.name); }, \
   [](RunConfig& c, const std::string& v) { c.name = to_size(v); }}
#define DDAD_DOUBLE(name) \
  {#name, [](const RunConfig& c) { return format_double(c.name); }, \
   [](RunConfig& c, const std::string& v) { c.name = to_double(v); }}
#define DDAD_BOOL(name) \
  {#name, [](const RunConfig& c) { return bool_str(c.name); }, \
   [](RunConfig& c, const std::string& v) { c.name = to_bool(v); }}
#define DDAD_STRING(name) \
  {#name, [](const RunConfig& c) { return c.name; }, \
   [](RunConfig& c, const std::string& v) { c.name = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      {"dataset", [](const RunConfig& c) { return dataset_name(c.dataset); },
       [](RunConfig& c, const std::string& v) {
         if (v == "synth_digits") c.dataset = DatasetKind::kSynthDigits;
         else if (v == "synth_blobs") c.dataset = DatasetKind::kSynthBlobs;
         else if (v == "idx") c.dataset = DatasetKind::kIdx;
         else throw InvalidArgument("dataset must be synth_digits, synth_blobs or idx");
       }},
      DDAD_STRING(idx_images),
      DDAD_STRING(idx_labels),
      DDAD_SIZE(digits_n),
      DDAD_SIZE(digits_classes),
      DDAD_DOUBLE(digits_noise),
      DDAD_SIZE(blobs_n),
      DDAD_SIZE(blobs_dim),
      DDAD_DOUBLE(blobs_delta),
      DDAD_DOUBLE(train_fraction),
      DDAD_DOUBLE(validation_fraction),
      DDAD_SIZE(batch_size),
      DDAD_SIZE(classifier_epochs),
      DDAD_DOUBLE(classifier_lr),
      DDAD_SIZE(classifier_batch),
      DDAD_SIZE(kernel_epochs),
      DDAD_DOUBLE(kernel_lr),
      DDAD_DOUBLE(lambda),
      DDAD_BOOL(kernel_train_featurizer),
      DDAD_SIZE(denoiser_epochs),
      DDAD_DOUBLE(denoiser_lr),
      {"decay_epochs", [](const RunConfig& c) { return join(c.decay_epochs, size_str); },
       [](RunConfig& c, const std::string& v) { c.decay_epochs = to_list<std::size_t>(v, to_size); }},
      DDAD_DOUBLE(alpha),
      DDAD_DOUBLE(noise_mu),
      DDAD_DOUBLE(noise_sigma),
      DDAD_SIZE(train_attack_iterations),
      DDAD_DOUBLE(train_attack_step),
      {"attack", [](const RunConfig& c) { return attack_name(c.attack); },
       [](RunConfig& c, const std::string& v) {
         if (v == "adaptive") c.attack = AttackKind::kAdaptive;
         else if (v == "pgd") c.attack = AttackKind::kPgd;
         else if (v == "fgsm") c.attack = AttackKind::kFgsm;
         else throw InvalidArgument("attack must be adaptive, pgd or fgsm");
       }},
      {"norm", [](const RunConfig& c) { return c.norm; },
       [](RunConfig& c, const std::string& v) {
         if (v != "linf" && v != "l2") throw InvalidArgument("norm must be linf or l2");
         c.norm = v;
       }},
      DDAD_DOUBLE(epsilon),
      DDAD_DOUBLE(step_size),
      DDAD_SIZE(pgd_iterations),
      DDAD_SIZE(eot),
      DDAD_BOOL(random_start),
      DDAD_BOOL(attack_against_reference),
      {"threshold_mode",
       [](const RunConfig& c) {
         return std::string(c.threshold_mode == ThresholdMode::kCalibrate ? "calibrate" : "fixed");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "calibrate") c.threshold_mode = ThresholdMode::kCalibrate;
         else if (v == "fixed") c.threshold_mode = ThresholdMode::kFixed;
         else throw InvalidArgument("threshold_mode must be calibrate or fixed");
       }},
      DDAD_DOUBLE(far),
      DDAD_DOUBLE(threshold),
      DDAD_SIZE(calibration_trials),
      DDAD_BOOL(resample_reference),
      DDAD_SIZE(eval_trials),
      {"mixed_proportions",
       [](const RunConfig& c) { return join(c.mixed_proportions, format_double); },
       [](RunConfig& c, const std::string& v) {
         c.mixed_proportions = to_list<double>(v, to_double);
       }},
      {"eval_batch_sizes", [](const RunConfig& c) { return join(c.eval_batch_sizes, size_str); },
       [](RunConfig& c, const std::string& v) {
         c.eval_batch_sizes = to_list<std::size_t>(v, to_size);
       }},
      {"ablations",
       [](const RunConfig& c) { return join(c.ablations, [](const std::string& s) { return s; }); },
       [](RunConfig& c, const std::string& v) {
         c.ablations = split_list(v);
         for (const auto& a : c.ablations) {
           if (a != "no_noise" && a != "no_gate" && a != "denoiser_only") {
             throw InvalidArgument("unknown ablation '" + a + "'");
           }
         }
       }},
      DDAD_STRING(defend_images),
      DDAD_STRING(defend_labels),
      DDAD_SIZE(verify_domains),
      DDAD_SIZE(verify_points),
      {"verify_mode", [](const RunConfig& c) { return c.verify_mode; },
       [](RunConfig& c, const std::string& v) {
         if (v != "all" && v != "sample") throw InvalidArgument("verify_mode must be all or sample");
         c.verify_mode = v;
       }},
      DDAD_SIZE(verify_samples),
      DDAD_STRING(out_dir),
  };
  return table;
}

#undef DDAD_SIZE
#undef DDAD_DOUBLE
#undef DDAD_BOOL
#undef DDAD_STRING

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

// Per-key range checks, so errors can point at the offending line.
void check_value(const RunConfig& c, const std::string& key) {
  auto positive = [&](double v) {
    if (!(v > 0.0)) throw InvalidArgument(key + " must be positive");
  };
  if (key == "alpha") positive(c.alpha);
  else if (key == "lambda") positive(c.lambda);
  else if (key == "kernel_lr") positive(c.kernel_lr);
  else if (key == "denoiser_lr") positive(c.denoiser_lr);
  else if (key == "classifier_lr") positive(c.classifier_lr);
  else if (key == "epsilon") positive(c.epsilon);
  else if (key == "step_size") positive(c.step_size);
  else if (key == "train_attack_step") positive(c.train_attack_step);
  else if (key == "noise_sigma" && c.noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be >= 0");
  else if (key == "digits_noise" && c.digits_noise < 0.0) throw InvalidArgument("digits_noise must be >= 0");
  else if (key == "far" && !(c.far > 0.0 && c.far < 1.0)) throw InvalidArgument("far must be in (0, 1)");
  else if (key == "batch_size" && c.batch_size < 2) throw InvalidArgument("batch_size must be at least 2");
  else if (key == "digits_classes" && (c.digits_classes < 2 || c.digits_classes > kMaxDigitClasses)) {
    throw InvalidArgument("digits_classes must be in [2, 4]");
  } else if (key == "mixed_proportions") {
    for (double p : c.mixed_proportions) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("mixed_proportions must lie in [0, 1]");
    }
  } else if (key == "eval_batch_sizes") {
    for (auto b : c.eval_batch_sizes) {
      if (b < 2) throw InvalidArgument("eval_batch_sizes entries must be at least 2");
    }
  } else if (key == "eot" || key == "pgd_iterations" || key == "kernel_epochs" ||
             key == "denoiser_epochs" || key == "classifier_epochs" || key == "eval_trials" ||
             key == "calibration_trials" || key == "train_attack_iterations" ||
             key == "verify_domains" || key == "verify_points" || key == "classifier_batch") {
    if (find_field(key)->get(c) == "0") throw InvalidArgument(key + " must be at least 1");
  }
}

}  // namespace

std::string dataset_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kSynthDigits: return "synth_digits";
    case DatasetKind::kSynthBlobs: return "synth_blobs";
    case DatasetKind::kIdx: return "idx";
  }
  return "";
}

std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::kAdaptive: return "adaptive";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kFgsm: return "fgsm";
  }
  return "";
}

bool RunConfig::operator==(const RunConfig& other) const {
  for (const auto& f : fields()) {
    if (f.get(*this) != f.get(other)) return false;
  }
  return true;
}

void RunConfig::validate() const {
  for (const auto& f : fields()) {
    try {
      check_value(*this, f.key);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  if (train_fraction + validation_fraction >= 1.0 || !(train_fraction > 0.0) ||
      validation_fraction < 0.0) {
    throw ConfigError("train_fraction and validation_fraction must leave room for a test split");
  }
  if (verify_mode == "all" && verify_points > 12) {
    throw ConfigError("verify_mode = all enumerates 2^verify_points hypotheses; use at most 12 "
                      "points or verify_mode = sample");
  }
  if (dataset == DatasetKind::kIdx && idx_images.empty()) {
    throw ConfigError("dataset = idx requires idx_images");
  }
}

RunConfig parse_config_text(std::string_view text) {
  RunConfig cfg;
  std::map<std::string, int> seen;
  bool dataset_given = false;
  std::istringstream is{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = find_field(key);
    if (!field) throw ConfigError("unknown key '" + key + "'", line_no);
    try {
      field->set(cfg, value);
      check_value(cfg, key);
    } catch (const InvalidArgument& e) {
      throw ConfigError(key + ": " + e.what(), line_no);
    }
    if (auto it = seen.find(key); it != seen.end()) {
      cfg.warnings.push_back("line " + std::to_string(line_no) + ": duplicate key '" + key +
                             "' overrides line " + std::to_string(it->second));
    }
    seen[key] = line_no;
    dataset_given = dataset_given || key == "dataset";
  }
  if (!dataset_given) throw ConfigError("missing required key 'dataset'");
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " not found");
  return parse_config_text(read_file(path));
}

std::string echo_config(const RunConfig& config) {
  std::string out = "# resolved configuration\n";
  for (const auto& w : config.warnings) out += "# warning: " + w + "\n";
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace ddad

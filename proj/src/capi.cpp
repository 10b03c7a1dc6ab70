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

#include "ddad/ddad.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include "ddad/config.hpp"
#include "ddad/defense.hpp"
#include "ddad/errors.hpp"
#include "ddad/experiments.hpp"
#include "ddad/rng.hpp"
#include "ddad/theory.hpp"
#include "ddad/version.hpp"

struct ddad_config {
  ddad::RunConfig value;
};

struct ddad_pipeline {
  ddad::DefensePipeline value;
  ddad::Shape batch_shape;
  mutable ddad::Rng rng;
};

struct ddad_gate {
  const ddad_pipeline* pipeline;
  ddad::BatchGate gate;
};

namespace {

thread_local std::string g_last_error;

ddad_status status_of(ddad::ErrorKind kind) {
  switch (kind) {
    case ddad::ErrorKind::kInvalidArgument: return DDAD_ERR_INVALID_ARGUMENT;
    case ddad::ErrorKind::kShape: return DDAD_ERR_SHAPE;
    case ddad::ErrorKind::kNumeric: return DDAD_ERR_NUMERIC;
    case ddad::ErrorKind::kFormat: return DDAD_ERR_FORMAT;
    case ddad::ErrorKind::kIo: return DDAD_ERR_IO;
    case ddad::ErrorKind::kConfig: return DDAD_ERR_CONFIG;
    case ddad::ErrorKind::kMissingArtifact: return DDAD_ERR_MISSING_ARTIFACT;
  }
  return DDAD_ERR_INTERNAL;
}

ddad_status fail(ddad_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
ddad_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return DDAD_OK;
  } catch (const ddad::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(DDAD_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DDAD_ERR_INTERNAL, e.what());
  }
}

#define DDAD_REQUIRE(cond, what) \
  if (!(cond)) return fail(DDAD_ERR_INVALID_ARGUMENT, what)

ddad::Tensor batch_from(const ddad_pipeline* p, const double* pixels, std::size_t rows,
                        std::size_t dim) {
  ddad::Shape shape = p->batch_shape;
  if (rows != shape[0] || dim * rows != ddad::shape_numel(shape)) {
    throw ddad::ShapeError("expected " + std::to_string(shape[0]) + " rows of " +
                           std::to_string(ddad::shape_numel(shape) / shape[0]) + " pixels, got " +
                           std::to_string(rows) + " x " + std::to_string(dim));
  }
  return ddad::Tensor(std::move(shape), std::vector<double>(pixels, pixels + rows * dim));
}

}  // namespace

extern "C" {

const char* ddad_version(void) { return ddad::kVersion; }

const char* ddad_last_error(void) { return g_last_error.c_str(); }

const char* ddad_status_name(ddad_status status) {
  switch (status) {
    case DDAD_OK: return "ok";
    case DDAD_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DDAD_ERR_SHAPE: return "shape error";
    case DDAD_ERR_NUMERIC: return "numeric error";
    case DDAD_ERR_FORMAT: return "format error";
    case DDAD_ERR_IO: return "i/o error";
    case DDAD_ERR_CONFIG: return "config error";
    case DDAD_ERR_MISSING_ARTIFACT: return "missing artifact";
    case DDAD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

int ddad_exit_code(ddad_status status) {
  switch (status) {
    case DDAD_OK: return 0;
    case DDAD_ERR_MISSING_ARTIFACT: return 2;
    case DDAD_ERR_NUMERIC: return 3;
    default: return 1;
  }
}

ddad_status ddad_config_parse_file(const char* path, ddad_config** out) {
  DDAD_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new ddad_config{ddad::parse_config(path)}; });
}

ddad_status ddad_config_parse_text(const char* text, ddad_config** out) {
  DDAD_REQUIRE(text && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new ddad_config{ddad::parse_config_text(text)}; });
}

void ddad_config_free(ddad_config* config) { delete config; }

ddad_status ddad_config_set_seed(ddad_config* config, uint64_t seed) {
  DDAD_REQUIRE(config, "null config");
  config->value.seed = seed;
  return DDAD_OK;
}

ddad_status ddad_config_set_out_dir(ddad_config* config, const char* dir) {
  DDAD_REQUIRE(config && dir, "null argument");
  DDAD_REQUIRE(*dir, "empty output directory");
  config->value.out_dir = dir;
  return DDAD_OK;
}

ddad_status ddad_config_batch_size(const ddad_config* config, size_t* out) {
  DDAD_REQUIRE(config && out, "null argument");
  *out = config->value.batch_size;
  return DDAD_OK;
}

ddad_status ddad_config_echo(const ddad_config* config, char* buf, size_t capacity,
                             size_t* needed) {
  DDAD_REQUIRE(config, "null config");
  DDAD_REQUIRE(buf || capacity == 0, "null buffer");
  return guarded([&] {
    const std::string text = ddad::echo_config(config->value);
    if (needed) *needed = text.size() + 1;
    if (capacity == 0) return;
    const std::size_t n = std::min(text.size(), capacity - 1);
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
  });
}

size_t ddad_subcommand_count(void) { return ddad::subcommand_names().size(); }

const char* ddad_subcommand_name(size_t index) {
  const auto& names = ddad::subcommand_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

ddad_status ddad_run_command(const ddad_config* config, const char* subcommand,
                             double* wall_seconds) {
  DDAD_REQUIRE(config && subcommand, "null argument");
  return guarded([&] {
    const ddad::RunSummary s = ddad::run_subcommand(config->value, subcommand);
    if (wall_seconds) *wall_seconds = s.wall_seconds;
  });
}

ddad_status ddad_pipeline_load(const ddad_config* config, ddad_pipeline** out) {
  DDAD_REQUIRE(config && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    ddad::DefensePipeline p = ddad::load_defense_pipeline(config->value);
    ddad::Shape shape = p.reference.shape();
    *out = new ddad_pipeline{std::move(p), std::move(shape),
                             ddad::Rng(ddad::derive_seed(config->value.seed, 7))};
  });
}

void ddad_pipeline_free(ddad_pipeline* pipeline) { delete pipeline; }

size_t ddad_pipeline_batch_size(const ddad_pipeline* pipeline) {
  return pipeline ? pipeline->value.batch_size() : 0;
}

size_t ddad_pipeline_input_dim(const ddad_pipeline* pipeline) {
  return pipeline ? pipeline->value.classifier->input_dim() : 0;
}

double ddad_pipeline_threshold(const ddad_pipeline* pipeline) {
  return pipeline ? pipeline->value.detector.threshold : std::nan("");
}

ddad_status ddad_pipeline_defend(const ddad_pipeline* pipeline, const double* pixels,
                                 size_t rows, size_t dim, int* labels, int* adversarial,
                                 double* statistic) {
  DDAD_REQUIRE(pipeline && pixels && labels, "null argument");
  return guarded([&] {
    const ddad::DefenseResult r =
        ddad::defend_batch(pipeline->value, batch_from(pipeline, pixels, rows, dim), &pipeline->rng);
    std::copy(r.labels.begin(), r.labels.end(), labels);
    if (adversarial) *adversarial = r.verdict.adversarial ? 1 : 0;
    if (statistic) *statistic = r.verdict.statistic;
  });
}

ddad_status ddad_gate_new(const ddad_pipeline* pipeline, ddad_gate** out) {
  DDAD_REQUIRE(pipeline && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new ddad_gate{pipeline, ddad::BatchGate(pipeline->value.batch_size())}; });
}

void ddad_gate_free(ddad_gate* gate) { delete gate; }

size_t ddad_gate_pending(const ddad_gate* gate) { return gate ? gate->gate.pending() : 0; }

ddad_status ddad_gate_push(ddad_gate* gate, const double* pixels, size_t dim, int* labels,
                           size_t* emitted, int* adversarial) {
  DDAD_REQUIRE(gate && pixels && labels && emitted, "null argument");
  *emitted = 0;
  return guarded([&] {
    const ddad_pipeline* p = gate->pipeline;
    ddad::Shape sample(p->batch_shape.begin() + 1, p->batch_shape.end());
    if (dim != ddad::shape_numel(sample)) {
      throw ddad::ShapeError("sample has " + std::to_string(dim) + " pixels, expected " +
                             std::to_string(ddad::shape_numel(sample)));
    }
    auto batch = gate->gate.push(ddad::Tensor(std::move(sample), std::vector<double>(pixels, pixels + dim)));
    if (!batch) return;
    const ddad::DefenseResult r = ddad::defend_batch(p->value, *batch, &p->rng);
    std::copy(r.labels.begin(), r.labels.end(), labels);
    *emitted = r.labels.size();
    if (adversarial) *adversarial = r.verdict.adversarial ? 1 : 0;
  });
}

ddad_status ddad_l1_divergence(const double* p, const double* q, size_t n, double* out) {
  DDAD_REQUIRE(p && q && out, "null argument");
  return guarded([&] { *out = ddad::theory::l1_divergence({p, n}, {q, n}); });
}

ddad_status ddad_verify_bound(size_t domains, size_t points, uint64_t seed,
                              uint64_t* hypotheses_checked, uint64_t* violations,
                              double* min_slack) {
  DDAD_REQUIRE(domains > 0 && points > 0, "domains and points must be positive");
  return guarded([&] {
    ddad::Rng rng(seed);
    ddad::theory::TheoremReport total;
    for (std::size_t i = 0; i < domains; ++i) {
      const auto d = ddad::theory::random_domain(rng, points);
      ddad::theory::merge(total, ddad::theory::verify_theorem(
                                     d, ddad::theory::HypothesisSource::kAll, 0, rng));
    }
    if (hypotheses_checked) *hypotheses_checked = total.hypotheses_checked;
    if (violations) *violations = total.violations;
    if (min_slack) *min_slack = total.min_slack;
  });
}

}  // extern "C"

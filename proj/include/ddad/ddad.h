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

/* C interface to the detect-then-denoise defense library.
 *
 * Every function returns a ddad_status. On failure the message is available
 * from ddad_last_error() on the calling thread until the next call on that
 * thread. Handles are opaque and must be released with their _free function.
 */
#ifndef DDAD_DDAD_H_
#define DDAD_DDAD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DDAD_API __declspec(dllexport)
#else
#define DDAD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ddad_status {
  DDAD_OK = 0,
  DDAD_ERR_INVALID_ARGUMENT = 1,
  DDAD_ERR_SHAPE = 2,
  DDAD_ERR_NUMERIC = 3,
  DDAD_ERR_FORMAT = 4,
  DDAD_ERR_IO = 5,
  DDAD_ERR_CONFIG = 6,
  DDAD_ERR_MISSING_ARTIFACT = 7,
  DDAD_ERR_INTERNAL = 8
} ddad_status;

typedef struct ddad_config ddad_config;
typedef struct ddad_pipeline ddad_pipeline;
typedef struct ddad_gate ddad_gate;

DDAD_API const char* ddad_version(void);
DDAD_API const char* ddad_last_error(void);
DDAD_API const char* ddad_status_name(ddad_status status);

/* Process exit code for a status: 0 ok, 2 missing artifact, 3 numeric, else 1. */
DDAD_API int ddad_exit_code(ddad_status status);

/* ---- configuration ---- */

DDAD_API ddad_status ddad_config_parse_file(const char* path, ddad_config** out);
DDAD_API ddad_status ddad_config_parse_text(const char* text, ddad_config** out);
DDAD_API void ddad_config_free(ddad_config* config);
DDAD_API ddad_status ddad_config_set_seed(ddad_config* config, uint64_t seed);
DDAD_API ddad_status ddad_config_set_out_dir(ddad_config* config, const char* dir);
DDAD_API ddad_status ddad_config_batch_size(const ddad_config* config, size_t* out);

/* Copies the resolved configuration echo into buf (NUL-terminated, truncated
 * to capacity). *needed receives the full length including the terminator. */
DDAD_API ddad_status ddad_config_echo(const ddad_config* config, char* buf, size_t capacity,
                                      size_t* needed);

/* ---- subcommands ---- */

DDAD_API size_t ddad_subcommand_count(void);
DDAD_API const char* ddad_subcommand_name(size_t index);

/* Runs one subcommand. wall_seconds may be NULL. */
DDAD_API ddad_status ddad_run_command(const ddad_config* config, const char* subcommand,
                                      double* wall_seconds);

/* ---- deployed pipeline ---- */

DDAD_API ddad_status ddad_pipeline_load(const ddad_config* config, ddad_pipeline** out);
DDAD_API void ddad_pipeline_free(ddad_pipeline* pipeline);
DDAD_API size_t ddad_pipeline_batch_size(const ddad_pipeline* pipeline);
DDAD_API size_t ddad_pipeline_input_dim(const ddad_pipeline* pipeline);
DDAD_API double ddad_pipeline_threshold(const ddad_pipeline* pipeline);

/* Defends one batch of exactly batch_size rows of input_dim pixels each.
 * labels receives `rows` predictions. */
DDAD_API ddad_status ddad_pipeline_defend(const ddad_pipeline* pipeline, const double* pixels,
                                          size_t rows, size_t dim, int* labels,
                                          int* adversarial, double* statistic);

/* Buffers single samples until a full batch can be defended. */
DDAD_API ddad_status ddad_gate_new(const ddad_pipeline* pipeline, ddad_gate** out);
DDAD_API void ddad_gate_free(ddad_gate* gate);
DDAD_API size_t ddad_gate_pending(const ddad_gate* gate);

/* Pushes one sample. When it completes a batch, *emitted is set to
 * batch_size and labels receives that many predictions; otherwise 0. */
DDAD_API ddad_status ddad_gate_push(ddad_gate* gate, const double* pixels, size_t dim,
                                    int* labels, size_t* emitted, int* adversarial);

/* ---- theory ---- */

DDAD_API ddad_status ddad_l1_divergence(const double* p, const double* q, size_t n, double* out);

/* Checks the risk bound on `domains` random discrete domains of `points`
 * points over every labeling. */
DDAD_API ddad_status ddad_verify_bound(size_t domains, size_t points, uint64_t seed,
                                       uint64_t* hypotheses_checked, uint64_t* violations,
                                       double* min_slack);

#ifdef __cplusplus
}
#endif

#endif  // DDAD_DDAD_H_

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
#include <span>
#include <string>
#include <vector>

#include "ddad/rng.hpp"

namespace ddad::theory {

/// A 0-1 labeling or hypothesis over points 0..N-1.
using Labeling = std::vector<int>;

/// Finite domain with clean and adversarial masses and one shared labeling.
struct DiscreteDomain {
  std::vector<double> phi_c;
  std::vector<double> phi_a;
  Labeling f;

  std::size_t size() const { return f.size(); }
  /// Masses non-negative, each summing to 1 within 1e-12, labels in {0, 1}.
  void validate() const;
};

inline constexpr double kMassTolerance = 1e-12;
/// Largest N for exhaustive enumeration of hypotheses.
inline constexpr std::size_t kMaxExhaustive = 12;

void validate_pmf(std::span<const double> phi);

/// sum_x |phi_c(x) - phi_a(x)|, which equals 2 sup_B |P_c(B) - P_a(B)|.
double l1_divergence(std::span<const double> phi_c, std::span<const double> phi_a);

/// sum_x phi(x) [h(x) != f(x)]
double risk(const Labeling& h, const Labeling& f, std::span<const double> phi);

/// Pointwise minimizer of the clean risk; points without clean mass follow f.
Labeling optimal_hypothesis(const DiscreteDomain& d);

/// Hypothesis number `bits` of the 2^N enumeration: h(x) = bit x.
Labeling hypothesis_from_bits(std::uint64_t bits, std::size_t n);

enum class HypothesisSource { kAll, kSample };

struct TheoremReport {
  std::size_t hypotheses_checked = 0;
  std::size_t violations = 0;
  /// slack = R_c + d1 - R_a; the bound holds when slack >= -tolerance.
  double max_slack = 0.0;
  double min_slack = 0.0;
};

/// Checks R(h, f, phi_a) <= R(h, f, phi_c) + d1 for every hypothesis (all 2^N,
/// N <= 12) or for `samples` uniformly drawn ones.
TheoremReport verify_theorem(const DiscreteDomain& d, HypothesisSource source,
                             std::size_t samples, Rng& rng, double tolerance = 1e-12);

/// Folds b into a (counts add, slacks take extremes).
void merge(TheoremReport& a, const TheoremReport& b);

/// Dirichlet(1) masses and uniform random labels.
DiscreteDomain random_domain(Rng& rng, std::size_t n);

/// Largest R_a - R_c - d1 found by hill climbing over domains and
/// hypotheses from random restarts. Never positive if the bound holds.
double search_worst_excess(Rng& rng, std::size_t n, std::size_t restarts, std::size_t steps);

struct ProbeRow {
  double mix = 0.0;
  double d1 = 0.0;
  /// max over h of R_a - R_c
  double max_excess = 0.0;
};

/// Interpolates phi_a = (1 - s) phi_c + s target along `grid` and reports the
/// largest excess adversarial risk at each point. Exhaustive over h.
std::vector<ProbeRow> tightness_probe(const DiscreteDomain& d, std::span<const double> target,
                                      std::span<const double> grid);

std::string probe_csv(const std::vector<ProbeRow>& rows);

}  // namespace ddad::theory

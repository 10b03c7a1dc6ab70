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

#include "ddad/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ddad/dataio.hpp"
#include "ddad/errors.hpp"

namespace ddad::theory {

void validate_pmf(std::span<const double> phi) {
  if (phi.empty()) throw InvalidArgument("pmf is empty");
  double total = 0.0;
  for (double p : phi) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidArgument("pmf has a negative or non-finite mass");
    total += p;
  }
  if (std::abs(total - 1.0) > kMassTolerance) {
    throw InvalidArgument("pmf sums to " + format_double(total) + ", not 1");
  }
}

void DiscreteDomain::validate() const {
  if (phi_c.size() != f.size() || phi_a.size() != f.size()) {
    throw ShapeError("domain: masses and labeling disagree on the number of points");
  }
  validate_pmf(phi_c);
  validate_pmf(phi_a);
  for (int y : f) {
    if (y != 0 && y != 1) throw InvalidArgument("domain: labels must be 0 or 1");
  }
}

double l1_divergence(std::span<const double> phi_c, std::span<const double> phi_a) {
  if (phi_c.size() != phi_a.size()) throw ShapeError("l1_divergence: pmf sizes differ");
  validate_pmf(phi_c);
  validate_pmf(phi_a);
  double d = 0.0;
  for (std::size_t x = 0; x < phi_c.size(); ++x) d += std::abs(phi_c[x] - phi_a[x]);
  return d;
}

double risk(const Labeling& h, const Labeling& f, std::span<const double> phi) {
  if (h.size() != f.size() || phi.size() != f.size()) throw ShapeError("risk: size mismatch");
  double r = 0.0;
  for (std::size_t x = 0; x < f.size(); ++x) {
    if (h[x] != f[x]) r += phi[x];
  }
  return r;
}

Labeling optimal_hypothesis(const DiscreteDomain& d) {
  d.validate();
  // With 0-1 loss each point is minimized independently, and agreeing with f
  // costs nothing whether or not the point carries clean mass.
  return d.f;
}

Labeling hypothesis_from_bits(std::uint64_t bits, std::size_t n) {
  Labeling h(n);
  for (std::size_t x = 0; x < n; ++x) h[x] = static_cast<int>((bits >> x) & 1U);
  return h;
}

namespace {

double slack(const DiscreteDomain& d, const Labeling& h, double d1) {
  return risk(h, d.f, d.phi_c) + d1 - risk(h, d.f, d.phi_a);
}

void record(TheoremReport& r, double s, double tolerance) {
  if (r.hypotheses_checked == 0) {
    r.max_slack = r.min_slack = s;
  } else {
    r.max_slack = std::max(r.max_slack, s);
    r.min_slack = std::min(r.min_slack, s);
  }
  ++r.hypotheses_checked;
  if (s < -tolerance) ++r.violations;
}

}  // namespace

TheoremReport verify_theorem(const DiscreteDomain& d, HypothesisSource source,
                             std::size_t samples, Rng& rng, double tolerance) {
  d.validate();
  const std::size_t n = d.size();
  const double d1 = l1_divergence(d.phi_c, d.phi_a);
  TheoremReport report;
  if (source == HypothesisSource::kAll) {
    if (n > kMaxExhaustive) {
      throw InvalidArgument("verify_theorem: " + std::to_string(n) +
                            " points is too many to enumerate (limit 12)");
    }
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
      record(report, slack(d, hypothesis_from_bits(bits, n), d1), tolerance);
    }
  } else {
    for (std::size_t i = 0; i < samples; ++i) {
      Labeling h(n);
      for (auto& v : h) v = static_cast<int>(rng.below(2));
      record(report, slack(d, h, d1), tolerance);
    }
  }
  return report;
}

void merge(TheoremReport& a, const TheoremReport& b) {
  if (b.hypotheses_checked == 0) return;
  if (a.hypotheses_checked == 0) {
    a = b;
    return;
  }
  a.hypotheses_checked += b.hypotheses_checked;
  a.violations += b.violations;
  a.max_slack = std::max(a.max_slack, b.max_slack);
  a.min_slack = std::min(a.min_slack, b.min_slack);
}

namespace {

std::vector<double> dirichlet_one(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& v : w) {
    v = -std::log1p(-rng.uniform());
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

DiscreteDomain random_domain(Rng& rng, std::size_t n) {
  if (n == 0) throw InvalidArgument("random_domain: need at least one point");
  DiscreteDomain d;
  d.phi_c = dirichlet_one(rng, n);
  d.phi_a = dirichlet_one(rng, n);
  d.f.resize(n);
  for (auto& y : d.f) y = static_cast<int>(rng.below(2));
  return d;
}

double search_worst_excess(Rng& rng, std::size_t n, std::size_t restarts, std::size_t steps) {
  double best = -std::numeric_limits<double>::infinity();
  auto excess = [](const DiscreteDomain& d, const Labeling& h) {
    double d1 = 0.0;
    for (std::size_t x = 0; x < d.size(); ++x) d1 += std::abs(d.phi_c[x] - d.phi_a[x]);
    return risk(h, d.f, d.phi_a) - risk(h, d.f, d.phi_c) - d1;
  };
  for (std::size_t r = 0; r < restarts; ++r) {
    DiscreteDomain d = random_domain(rng, n);
    Labeling h(n);
    for (auto& v : h) v = static_cast<int>(rng.below(2));
    double cur = excess(d, h);
    for (std::size_t s = 0; s < steps; ++s) {
      DiscreteDomain nd = d;
      Labeling nh = h;
      switch (rng.below(3)) {
        case 0: nh[rng.below(n)] ^= 1; break;
        case 1:
        case 2: {
          // Move mass between two points of one pmf.
          auto& phi = rng.below(2) == 0 ? nd.phi_c : nd.phi_a;
          const auto from = rng.below(n);
          const auto to = rng.below(n);
          const double amount = phi[from] * rng.uniform();
          phi[from] -= amount;
          phi[to] += amount;
          break;
        }
      }
      const double next = excess(nd, nh);
      if (next >= cur) {
        d = std::move(nd);
        h = std::move(nh);
        cur = next;
      }
    }
    best = std::max(best, cur);
  }
  return best;
}

std::vector<ProbeRow> tightness_probe(const DiscreteDomain& d, std::span<const double> target,
                                      std::span<const double> grid) {
  d.validate();
  validate_pmf(target);
  const std::size_t n = d.size();
  if (target.size() != n) throw ShapeError("tightness_probe: target size differs from domain");
  if (n > kMaxExhaustive) throw InvalidArgument("tightness_probe: domain too large to enumerate");
  std::vector<ProbeRow> rows;
  for (double s : grid) {
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("tightness_probe: mix outside [0, 1]");
    std::vector<double> phi_a(n);
    for (std::size_t x = 0; x < n; ++x) phi_a[x] = (1.0 - s) * d.phi_c[x] + s * target[x];
    ProbeRow row;
    row.mix = s;
    row.d1 = l1_divergence(d.phi_c, phi_a);
    row.max_excess = -std::numeric_limits<double>::infinity();
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
      const Labeling h = hypothesis_from_bits(bits, n);
      row.max_excess = std::max(row.max_excess, risk(h, d.f, phi_a) - risk(h, d.f, d.phi_c));
    }
    rows.push_back(row);
  }
  return rows;
}

std::string probe_csv(const std::vector<ProbeRow>& rows) {
  std::ostringstream os;
  os << "mix,d1,max_excess\n";
  for (const auto& r : rows) {
    os << format_double(r.mix) << ',' << format_double(r.d1) << ',' << format_double(r.max_excess)
       << '\n';
  }
  return os.str();
}

}  // namespace ddad::theory

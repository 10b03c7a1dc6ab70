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

// Independent scalar transcriptions used as test oracles. Nothing here calls
// the library's vectorized kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ddad/discrepancy.hpp"
#include "ddad/models.hpp"
#include "ddad/rng.hpp"
#include "ddad/tensor.hpp"

namespace oracle {

using ddad::Tensor;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

// Relative error with an absolute floor for values near zero.
inline double close_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, close_err(a[i], b[i], floor));
  return worst;
}

// Gradient agreement: worst coordinate error scaled by the largest coordinate,
// so near-zero components are judged against the gradient's own magnitude.
inline double grad_err(const Tensor& a, const Tensor& b) {
  double diff = 0.0, scale = 1e-300;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline Tensor random_tensor(ddad::Rng& rng, ddad::Shape shape, double lo = 0.0, double hi = 1.0) {
  return ddad::sample_uniform(rng, shape, lo, hi);
}

inline double sqdist(const Tensor& x, std::size_t i, const Tensor& z, std::size_t j) {
  const std::size_t d = x.row_size();
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = x[i * d + k] - z[j * d + k];
    s += diff * diff;
  }
  return s;
}

inline double gauss(double d2, double sigma) { return std::exp(-d2 / (2.0 * sigma * sigma)); }

// Penultimate activations computed with explicit loops.
inline Tensor mlp_features(const ddad::ClassifierParams& p, const Tensor& x) {
  auto layer = [](const ddad::Affine& a, const Tensor& in) {
    const std::size_t n = in.rows(), di = a.in(), dout = a.out();
    Tensor out({n, dout});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t o = 0; o < dout; ++o) {
        double s = a.bias[o];
        for (std::size_t i = 0; i < di; ++i) s += in[r * di + i] * a.weight[i * dout + o];
        out[r * dout + o] = std::max(s, 0.0);
      }
    return out;
  };
  return layer(p.hidden2, layer(p.hidden1, x.reshaped({x.rows(), x.row_size()})));
}

inline Tensor deep_gram(const ddad::DeepKernelParams& k, const Tensor& x, const Tensor& z) {
  const Tensor fx = k.featurizer ? mlp_features(*k.featurizer, x) : x;
  const Tensor fz = k.featurizer ? mlp_features(*k.featurizer, z) : z;
  const double b0 = 1.0 / (1.0 + std::exp(-k.raw_beta0));
  const double sq = std::exp(k.raw_sigma_q), sp = std::exp(k.raw_sigma_phi);
  Tensor g({x.rows(), z.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < z.rows(); ++j) {
      const double s = gauss(sqdist(fx, i, fz, j), sp);
      const double q = gauss(sqdist(x, i, z, j), sq);
      g[i * z.rows() + j] = ((1.0 - b0) * s + b0) * q;
    }
  return g;
}

inline Tensor h_of(const Tensor& kxx, const Tensor& kzz, const Tensor& kxz) {
  const std::size_t n = kxx.rows();
  Tensor h({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      h[i * n + j] = kxx[i * n + j] + kzz[i * n + j] - kxz[i * n + j] - kxz[j * n + i];
  return h;
}

inline double mmd_nested(const Tensor& h) {
  const std::size_t n = h.rows();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s += h[i * n + j];
  return s / (static_cast<double>(n) * static_cast<double>(n - 1));
}

// Regularized variance, written out term by term.
// Literal two-term formula, accumulated in quad precision so the cancellation
// between the terms does not limit the reference.
inline double variance_nested(const Tensor& h, double lambda) {
  using Q = __float128;
  const std::size_t n = h.rows();
  const Q nd = static_cast<Q>(n);
  Q first = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Q row = 0;
    for (std::size_t j = 0; j < n; ++j) row += h[i * n + j];
    first += row * row;
    total += row;
  }
  return static_cast<double>(4 / (nd * nd * nd) * first - 4 / (nd * nd * nd * nd) * total * total +
                             lambda);
}

inline double mmd_deep(const ddad::DeepKernelParams& k, const Tensor& x, const Tensor& z) {
  return mmd_nested(h_of(deep_gram(k, x, x), deep_gram(k, z, z), deep_gram(k, x, z)));
}

inline double j_deep(const ddad::DeepKernelParams& k, const Tensor& x, const Tensor& z,
                     double lambda) {
  const Tensor h = h_of(deep_gram(k, x, x), deep_gram(k, z, z), deep_gram(k, x, z));
  const double v = std::max(variance_nested(h, lambda), lambda * ddad::kVarianceFloorFactor);
  return mmd_nested(h) / std::sqrt(v);
}

// Central differences over every coordinate of x.
template <typename F>
Tensor central_diff(F f, const Tensor& x, double h) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace oracle

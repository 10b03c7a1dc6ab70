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

#include <cstdint>
#include <span>
#include <vector>

#include "ddad/tensor.hpp"

namespace ddad {

/// xoshiro256** seeded through splitmix64.
///
/// Streams are reproducible for a given seed within this implementation. An
/// Rng must not be shared between threads; use fork() to derive children.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (both variates are used).
  double normal();

  /// Child generator seeded from this stream.
  Rng fork() { return Rng(next_u64()); }

  std::vector<std::size_t> permutation(std::size_t n);
  /// `k` distinct indices from [0, n), in random order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// IID N(mu, sigma^2) samples. sigma == 0 returns a constant tensor.
/// Seed for an independent stream `stream` under a run seed (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

Tensor sample_gaussian(Rng& rng, const Shape& shape, double mu, double sigma);
Tensor sample_uniform(Rng& rng, const Shape& shape, double lo, double hi);

}  // namespace ddad

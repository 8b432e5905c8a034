// Copyright 2026 The relfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RELFUSE_RNG_HPP_
#define RELFUSE_RNG_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace relfuse {

/// xoshiro256** seeded through splitmix64. The standard library's
/// distributions are implementation-defined, so every draw used by the
/// library (init, dropout, shuffling, synthetic data) goes through this type
/// to keep runs reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream keyed by a seed and a tag path, e.g.
  /// derive(seed, {kDropoutTag, step}).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal();

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename U>
  void shuffle(std::vector<U>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p);
    return p;
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer, used for seed derivation.
std::uint64_t mix64(std::uint64_t x);

}  // namespace relfuse

#endif  // RELFUSE_RNG_HPP_

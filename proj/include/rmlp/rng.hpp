// Copyright 2026 The RMLP Authors. All Rights Reserved.
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

// Deterministic random numbers: xoshiro256** seeded through splitmix64.
// Gaussians use Box-Muller on two consecutive 53-bit uniforms; both outputs of
// a pair are used, cosine branch first. The exact stream is part of the
// library's reproducibility contract, so do not change it casually.

#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace rmlp {

// One step of the splitmix64 finalizer applied to `x + golden gamma`.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Independent child seed for the `index`-th layer, trial or substream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return splitmix64(base ^ index);
}

class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  // Uniform integer in [0, bound). Lemire-free modulo reduction is fine here:
  // bounds are tiny compared with 2^64.
  std::uint64_t below(std::uint64_t bound) noexcept;
  // Standard normal via Box-Muller.
  double gaussian() noexcept;

  const std::array<std::uint64_t, 4>& state() const noexcept { return s_; }

 private:
  std::array<std::uint64_t, 4> s_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rmlp

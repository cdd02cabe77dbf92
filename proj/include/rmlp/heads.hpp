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

// Projection heads: the randomized residual layer, the randomized MLP built
// from it, and the trainable bias-free MLP baseline. Both head kinds share
// one interface so the training loop can swap them freely.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rmlp/tensor.hpp"

namespace rmlp {

// Gamma in R^{n x m}, entries N(0, amplitude / n), drawn row-major from
// Xoshiro256(seed) as sqrt(amplitude / n) * z. A zero amplitude gives an
// exact zero matrix. The result never requires a gradient.
Tensor sample_gaussian_matrix(std::size_t in_dim, std::size_t out_dim, double amplitude, std::uint64_t seed);
// Same draw as a plain matrix, for Monte Carlo loops that need no tape.
RowMatrix gaussian_matrix(std::size_t in_dim, std::size_t out_dim, double amplitude, std::uint64_t seed);

// First `out_dim` coordinates of each row, zero-padded when out_dim > in_dim.
Tensor truncate_or_pad(const Tensor& x, std::size_t out_dim);

// x -> truncate_or_pad(x, n) + Gamma x, applied row-wise. Gamma is frozen.
struct RandomizedLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  double amplitude = 0.0;
  std::uint64_t seed = 0;
  Tensor gamma;  // [out_dim x in_dim]

  static RandomizedLayer create(std::size_t in_dim, std::size_t out_dim, double amplitude, std::uint64_t seed);
};

Tensor rle_apply(const RandomizedLayer& layer, const Tensor& x);

enum class HeadKind { MLP, RMLP };
enum class Activation { GELU };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

struct HeadSpec {
  std::vector<std::size_t> dims;  // d_in, hidden..., d_out
  Activation activation = Activation::GELU;
  HeadKind kind = HeadKind::RMLP;
  std::optional<double> amplitude;  // RMLP only
  std::uint64_t seed = 0;

  // Throws ConfigError when the head shape or kind settings are malformed. Never allocates weights.
  void validate() const;
  std::size_t layer_count() const { return dims.size() - 1; }
  // Sum of dims[i] * dims[i+1] for MLP, 0 for RMLP.
  std::size_t trainable_parameter_count() const;
};

class Head {
 public:
  Head() = default;

  const HeadSpec& spec() const noexcept { return spec_; }
  HeadKind kind() const noexcept { return spec_.kind; }
  std::size_t input_dim() const { return spec_.dims.front(); }
  std::size_t output_dim() const { return spec_.dims.back(); }

  // tokens[t x d_in] -> [t x d_out]; no activation after the last layer.
  Tensor forward(const Tensor& tokens) const;

  std::size_t trainable_parameter_count() const;
  // Trainable weights ([in x out] each). Empty for an RMLP head.
  const std::vector<Tensor>& weights() const noexcept { return weights_; }
  std::vector<Tensor>& weights() noexcept { return weights_; }
  const std::vector<RandomizedLayer>& randomized_layers() const noexcept { return layers_; }

  // Fresh copies of the trainable weights with the given grad flag. Frozen
  // randomized layers are shared, not copied.
  Head copy(bool requires_grad) const;

 private:
  friend Head build_head(const HeadSpec& spec);
  friend Head assemble_head(const HeadSpec& spec, std::vector<Tensor> weights, std::vector<RandomizedLayer> layers);

  HeadSpec spec_;
  std::vector<Tensor> weights_;
  std::vector<RandomizedLayer> layers_;
};

// Randomized layers get seeds derive_seed(spec.seed, layer_index); MLP layers
// are Kaiming-uniform (bound sqrt(6 / fan_in)) from the same derived seeds.
Head build_head(const HeadSpec& spec);
// Rebuilds a head around existing tensors (checkpoint loading).
Head assemble_head(const HeadSpec& spec, std::vector<Tensor> weights, std::vector<RandomizedLayer> layers);

inline Tensor head_forward(const Head& head, const Tensor& tokens) { return head.forward(tokens); }

}  // namespace rmlp

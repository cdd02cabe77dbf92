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

#include "rmlp/heads.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "rmlp/error.hpp"
#include "rmlp/rng.hpp"

namespace rmlp {

namespace {

void fill_gaussian(std::span<double> out, std::size_t in_dim, std::size_t out_dim, double amplitude,
                   std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) throw DomainError("sample_gaussian_matrix: dimensions must be positive");
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
    throw DomainError("sample_gaussian_matrix: amplitude must be non-negative");
  }
  if (amplitude == 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const double sd = std::sqrt(amplitude / static_cast<double>(out_dim));
  Xoshiro256 rng(seed);
  for (double& v : out) v = sd * rng.gaussian();
}

}  // namespace

Tensor sample_gaussian_matrix(std::size_t in_dim, std::size_t out_dim, double amplitude, std::uint64_t seed) {
  std::vector<double> data(in_dim * out_dim);
  fill_gaussian(data, in_dim, out_dim, amplitude, seed);
  return Tensor({out_dim, in_dim}, std::move(data), false);
}

RowMatrix gaussian_matrix(std::size_t in_dim, std::size_t out_dim, double amplitude, std::uint64_t seed) {
  RowMatrix g(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in_dim));
  fill_gaussian(std::span<double>(g.data(), static_cast<std::size_t>(g.size())), in_dim, out_dim, amplitude, seed);
  return g;
}

Tensor truncate_or_pad(const Tensor& x, std::size_t out_dim) {
  const std::size_t m = x.cols();
  if (out_dim == m) return x;
  if (out_dim < m) return slice_cols(x, 0, out_dim);
  const Tensor zeros = Tensor::zeros({x.rows(), out_dim - m});
  const Tensor parts[] = {x, zeros};
  return concat_cols(parts);
}

RandomizedLayer RandomizedLayer::create(std::size_t in_dim, std::size_t out_dim, double amplitude,
                                        std::uint64_t seed) {
  return RandomizedLayer{in_dim, out_dim, amplitude, seed, sample_gaussian_matrix(in_dim, out_dim, amplitude, seed)};
}

Tensor rle_apply(const RandomizedLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != layer.in_dim) {
    throw ShapeError("rle_apply: expected [batch x " + std::to_string(layer.in_dim) + "], got " +
                     shape_string(x.shape()));
  }
  return add(truncate_or_pad(x, layer.out_dim), matmul(x, transpose(layer.gamma)));
}

std::string to_string(HeadKind kind) { return kind == HeadKind::MLP ? "mlp" : "rmlp"; }

HeadKind parse_head_kind(const std::string& name) {
  if (name == "mlp" || name == "MLP") return HeadKind::MLP;
  if (name == "rmlp" || name == "RMLP") return HeadKind::RMLP;
  throw ConfigError("unknown head kind '" + name + "' (expected mlp or rmlp)");
}

void HeadSpec::validate() const {
  if (dims.size() < 2) throw ConfigError("head dims need at least input and output sizes");
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("head dims must be positive");
  }
  if (kind == HeadKind::MLP && amplitude) throw ConfigError("an MLP head takes no amplitude");
  if (kind == HeadKind::RMLP) {
    if (!amplitude) throw ConfigError("an RMLP head needs an amplitude");
    if (!(*amplitude >= 0.0) || !std::isfinite(*amplitude)) throw ConfigError("RMLP amplitude must be >= 0");
  }
}

std::size_t HeadSpec::trainable_parameter_count() const {
  if (kind == HeadKind::RMLP) return 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) total += dims[i] * dims[i + 1];
  return total;
}

Tensor Head::forward(const Tensor& tokens) const {
  if (tokens.rank() != 2 || tokens.cols() != input_dim()) {
    throw ShapeError("head_forward: expected [t x " + std::to_string(input_dim()) + "], got " +
                     shape_string(tokens.shape()));
  }
  Tensor x = tokens;
  const std::size_t n = spec_.layer_count();
  for (std::size_t i = 0; i < n; ++i) {
    x = spec_.kind == HeadKind::RMLP ? rle_apply(layers_[i], x) : matmul(x, weights_[i]);
    if (i + 1 < n) x = gelu(x);
  }
  return x;
}

std::size_t Head::trainable_parameter_count() const {
  std::size_t total = 0;
  for (const Tensor& w : weights_) total += w.size();
  return total;
}

Head Head::copy(bool requires_grad) const {
  Head out;
  out.spec_ = spec_;
  out.layers_ = layers_;
  for (const Tensor& w : weights_) out.weights_.push_back(w.clone(requires_grad));
  return out;
}

Head build_head(const HeadSpec& spec) {
  spec.validate();
  Head head;
  head.spec_ = spec;
  for (std::size_t i = 0; i < spec.layer_count(); ++i) {
    const std::size_t in = spec.dims[i], out = spec.dims[i + 1];
    const std::uint64_t seed = derive_seed(spec.seed, i);
    if (spec.kind == HeadKind::RMLP) {
      head.layers_.push_back(RandomizedLayer::create(in, out, *spec.amplitude, seed));
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(in));
      Xoshiro256 rng(seed);
      std::vector<double> w(in * out);
      for (double& v : w) v = bound * (2.0 * rng.uniform() - 1.0);
      head.weights_.emplace_back(Shape{in, out}, std::move(w), true);
    }
  }
  return head;
}

Head assemble_head(const HeadSpec& spec, std::vector<Tensor> weights, std::vector<RandomizedLayer> layers) {
  spec.validate();
  const std::size_t expected = spec.layer_count();
  if (spec.kind == HeadKind::MLP ? weights.size() != expected : layers.size() != expected) {
    throw ShapeError("assemble_head: layer count does not match the head dims");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].shape() != Shape{spec.dims[i], spec.dims[i + 1]}) throw ShapeError("assemble_head: weight shape");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].gamma.shape() != Shape{spec.dims[i + 1], spec.dims[i]}) {
      throw ShapeError("assemble_head: gamma shape");
    }
  }
  Head head;
  head.spec_ = spec;
  head.weights_ = std::move(weights);
  head.layers_ = std::move(layers);
  return head;
}

}  // namespace rmlp

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

// Interpretability measurements over patch tokens: first-order (token norm)
// and second-order (top-3 principal subspace norm) attention maps, the
// gradient-based two-component split into low/high-information patches, and
// summary statistics over collections of maps.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "rmlp/error.hpp"
#include "rmlp/tensor.hpp"

namespace rmlp {

enum class MapOrder { First, Second };

struct AttentionMap {
  RowMatrix grid;  // g x g, non-negative
  MapOrder order = MapOrder::First;
};

// Side of the square patch grid holding `count` tokens; ShapeError otherwise.
std::size_t grid_side(std::size_t count);

template <typename Derived>
AttentionMap first_order_map(const Eigen::MatrixBase<Derived>& patch_tokens) {
  const std::size_t g = grid_side(static_cast<std::size_t>(patch_tokens.rows()));
  const Eigen::VectorXd norms = patch_tokens.template cast<double>().rowwise().norm();
  AttentionMap map{RowMatrix(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g)), MapOrder::First};
  std::copy(norms.data(), norms.data() + norms.size(), map.grid.data());
  return map;
}

// Number of principal directions kept by second_order_map.
inline constexpr Eigen::Index kPrincipalComponents = 3;

// Tokens are centered per image; each patch scores the Euclidean norm of its
// coordinates in the span of the top three covariance eigenvectors.
template <typename Derived>
AttentionMap second_order_map(const Eigen::MatrixBase<Derived>& patch_tokens) {
  const auto count = patch_tokens.rows();
  const std::size_t g = grid_side(static_cast<std::size_t>(count));
  if (count < 4 || patch_tokens.cols() < kPrincipalComponents) {
    throw ShapeError("second_order_map: need at least 4 tokens of dimension >= 3");
  }
  const RowMatrix tokens = patch_tokens.template cast<double>();
  const RowMatrix centered = tokens.rowwise() - tokens.colwise().mean();
  const Eigen::MatrixXd covariance = centered.transpose() * centered / static_cast<double>(count);
  if (!(covariance.trace() > 1e-300)) throw DegenerateInputError("second_order_map: tokens have zero variance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success) throw DegenerateInputError("second_order_map: eigendecomposition failed");
  // Eigenvalues come back ascending; the last columns span the top subspace.
  const Eigen::MatrixXd top = solver.eigenvectors().rightCols(kPrincipalComponents);
  const Eigen::VectorXd norms = (centered * top).rowwise().norm();
  AttentionMap map{RowMatrix(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g)), MapOrder::Second};
  std::copy(norms.data(), norms.data() + norms.size(), map.grid.data());
  return map;
}

// --- two-component 1-D Gaussian mixture ------------------------------------

struct EmOptions {
  std::size_t max_iters = 100;
  double tolerance = 1e-8;  // relative log-likelihood change
};

struct Gmm1d {
  std::array<double, 2> means{};
  std::array<double, 2> variances{};
  std::array<double, 2> weights{};
  std::size_t high_component = 1;  // component with the larger mean
  std::size_t iterations = 0;
  // Log-likelihood of the data under the parameters entering each E-step.
  std::vector<double> log_likelihood;

  std::array<double, 2> posterior(double x) const;
  bool is_high(double x) const;
  double log_likelihood_of(std::span<const double> xs) const;
};

// k-means++ two-seed initialization from `seed`, then EM. Variances are
// floored at 1e-6 times the sample variance. Throws DegenerateInputError
// when all values coincide.
Gmm1d fit_gmm_1d(std::span<const double> xs, const EmOptions& options, std::uint64_t seed);

// Central differences with replicated borders; |(dI/dx, dI/dy)|.
RowMatrix gradient_magnitude(const RowMatrix& image);
// Separable Gaussian, kernel truncated at ceil(3 sigma) and normalized,
// replicated borders. sigma <= 0 returns the input.
RowMatrix gaussian_blur(const RowMatrix& image, double sigma);
RowMatrix patch_means(const RowMatrix& image, std::size_t patch_size);

struct PatchSplit {
  BoolGrid labels;      // true = high-information
  Gmm1d gmm;
  RowMatrix statistic;  // per-patch mean smoothed gradient magnitude
};

PatchSplit gmm_patch_split(const RowMatrix& image, std::size_t patch_size, double smoothing_sigma,
                           std::size_t em_iters, std::uint64_t seed);

// --- statistics over maps ----------------------------------------------------

struct CurvePoint {
  double rank_fraction = 0.0;
  double norm = 0.0;
};

// Pooled map values sorted descending; point k (1-based) is (k / total, value).
std::vector<CurvePoint> norm_proportion_curve(std::span<const AttentionMap> maps);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> density;  // integrates to 1 over [lo, hi]
  double bin_width() const { return (hi - lo) / static_cast<double>(density.size()); }
};

struct SplitDensities {
  Histogram low;
  Histogram high;
  double low_mean = 0.0;
  double high_mean = 0.0;
};

inline constexpr std::size_t kDefaultHistogramBins = 32;

SplitDensities split_densities(std::span<const AttentionMap> maps, std::span<const BoolGrid> splits,
                               std::size_t bins = kDefaultHistogramBins);

// Indicator of the ceil(nu / 4) largest cells (ties by row-major index)
// correlated with `presence`. DomainError when either sequence is constant.
double top_norm_correlation(const AttentionMap& map, const BoolGrid& presence);
BoolGrid top_quarter_indicator(const AttentionMap& map);

double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace rmlp

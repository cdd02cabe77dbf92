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

// Numerical checks of distortion control for frozen Gaussian matrices:
// difference sets, restricted singular values, the amplitude bound, the
// expected squared norm, the per-point residual of one randomized layer and
// the unit-circle demonstration.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rmlp/error.hpp"
#include "rmlp/tensor.hpp"

namespace rmlp {

template <typename Scalar>
struct DifferenceSet {
  RowMatrixX<Scalar> unit_vectors;  // K x m, row k = (p_i - p_j) / |p_i - p_j|
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (i, j), i < j
  std::size_t source_count = 0;

  std::size_t size() const noexcept { return pairs.size(); }
};

inline constexpr double kDuplicatePointTolerance = 1e-12;

// Normalized upper-triangular pairwise differences, ordered (0,1), (0,2), ...
template <typename Derived>
DifferenceSet<typename Derived::Scalar> difference_set(const Eigen::MatrixBase<Derived>& points) {
  using Scalar = typename Derived::Scalar;
  const auto n = static_cast<std::size_t>(points.rows());
  if (n < 2) throw DomainError("difference_set: need at least two points");
  DifferenceSet<Scalar> out;
  out.source_count = n;
  out.unit_vectors.resize(static_cast<Eigen::Index>(n * (n - 1) / 2), points.cols());
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      const auto diff = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).eval();
      const Scalar norm = diff.norm();
      if (!(norm >= Scalar(kDuplicatePointTolerance))) {
        throw DegenerateInputError("difference_set: points " + std::to_string(i) + " and " + std::to_string(j) +
                                   " coincide");
      }
      out.unit_vectors.row(k) = diff / norm;
      out.pairs.emplace_back(i, j);
    }
  }
  return out;
}

// Largest amplitude with lambda / n < eps^2 / (8 ln N): n * eps^2 / (8 ln N).
double amplitude_bound(double epsilon, std::size_t point_count, std::size_t out_dim);

struct PairViolation {
  std::size_t trial = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  double norm = 0.0;
};

template <typename Scalar>
struct DistortionReport {
  Scalar sigma_min = std::numeric_limits<Scalar>::infinity();
  Scalar sigma_max = -std::numeric_limits<Scalar>::infinity();
  Scalar epsilon = 0;
  std::vector<PairViolation> violations;
  double violation_fraction = 0.0;
  std::size_t trials = 0;
  std::size_t pairs_per_trial = 0;
  std::vector<Scalar> pair_norms;  // trial-major, pairs_per_trial per trial

  // Folds another report (same epsilon and difference set) in as further trials.
  void merge(const DistortionReport& other) {
    if (other.pairs_per_trial != pairs_per_trial && trials != 0) throw ShapeError("merge: difference sets differ");
    pairs_per_trial = other.pairs_per_trial;
    epsilon = other.epsilon;
    sigma_min = std::min(sigma_min, other.sigma_min);
    sigma_max = std::max(sigma_max, other.sigma_max);
    for (PairViolation v : other.violations) {
      v.trial += trials;
      violations.push_back(v);
    }
    pair_norms.insert(pair_norms.end(), other.pair_norms.begin(), other.pair_norms.end());
    trials += other.trials;
    violation_fraction =
        static_cast<double>(violations.size()) / static_cast<double>(pairs_per_trial * trials);
  }
};

// |Gamma e| for every e in E, restricted singular values and the pairs whose
// norm leaves [1 - eps, 1 + eps]. A single trial.
template <typename DerivedG, typename Scalar>
DistortionReport<Scalar> check_distortion(const Eigen::MatrixBase<DerivedG>& gamma, const DifferenceSet<Scalar>& eset,
                                          double epsilon) {
  if (gamma.cols() != eset.unit_vectors.cols()) {
    throw ShapeError("check_distortion: gamma has " + std::to_string(gamma.cols()) + " columns, vectors have " +
                     std::to_string(eset.unit_vectors.cols()));
  }
  if (!(epsilon > 0.0)) throw DomainError("check_distortion: epsilon must be positive");
  DistortionReport<Scalar> report;
  report.epsilon = static_cast<Scalar>(epsilon);
  report.trials = 1;
  report.pairs_per_trial = eset.size();
  // Column k of the product is Gamma e_k.
  const RowMatrixX<Scalar> images = gamma.template cast<Scalar>() * eset.unit_vectors.transpose();
  const auto norms = images.colwise().norm().eval();
  report.pair_norms.assign(norms.data(), norms.data() + norms.size());
  for (std::size_t k = 0; k < eset.size(); ++k) {
    const Scalar norm = report.pair_norms[k];
    report.sigma_min = std::min(report.sigma_min, norm);
    report.sigma_max = std::max(report.sigma_max, norm);
    if (norm < Scalar(1.0 - epsilon) || norm > Scalar(1.0 + epsilon)) {
      report.violations.push_back({0, eset.pairs[k].first, eset.pairs[k].second, static_cast<double>(norm)});
    }
  }
  report.violation_fraction = eset.size() ? static_cast<double>(report.violations.size()) / eset.size() : 0.0;
  return report;
}

// `trials` independent Gammas (trial t seeded with derive_seed(seed, t)) checked
// against the difference set of `points`.
DistortionReport<double> distortion_experiment(const RowMatrix& points, std::size_t out_dim, double amplitude,
                                               double epsilon, std::size_t trials, std::uint64_t seed);

struct ExpectedNorm {
  double empirical_mean = 0.0;
  // m * lambda * |x|^2 / n, the closed form as usually quoted for this check.
  double theoretical = 0.0;
  // lambda * |x|^2: the second moment of Gamma x for n x m Gamma with
  // N(0, lambda / n) entries. Equals `theoretical` only when m == n.
  double exact = 0.0;
};

ExpectedNorm expected_norm_check(std::size_t in_dim, std::size_t out_dim, double amplitude,
                                 const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t samples, std::uint64_t seed);

struct CorollaryOptions {
  // Reject amplitudes outside lambda / n < eps^2 / (8 ln N) with a DomainError.
  bool enforce_bound = true;
};

// Fraction of (trial, point) pairs whose residual |pad_n(x) - phi(x)| reaches
// eps, where phi is one randomized residual layer R^m -> R^n.
double corollary_check(const RowMatrix& unit_points, std::size_t out_dim, double amplitude, double epsilon,
                       std::size_t trials, std::uint64_t seed, CorollaryOptions options = {});

struct CircleCloud {
  RowMatrix points_in;   // P x 2, unit circle
  RowMatrix points_out;  // P x 2
  double lambda = 0.0;
  double radial_cv = 0.0;
};

// std / mean (population std) of |out_k| / |in_k|. Dividing by the input
// radii removes their rounding so the identity map scores exactly zero.
double radial_cv(const RowMatrix& points_in, const RowMatrix& points_out);

CircleCloud circle_demo(std::size_t point_count, double amplitude, std::uint64_t seed);

}  // namespace rmlp

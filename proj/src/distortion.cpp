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

#include "rmlp/distortion.hpp"

#include <numbers>
#include <sstream>

#include "rmlp/heads.hpp"
#include "rmlp/rng.hpp"

namespace rmlp {

double amplitude_bound(double epsilon, std::size_t point_count, std::size_t out_dim) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw DomainError("amplitude_bound: epsilon must lie in (0, 1)");
  if (point_count < 3) throw DomainError("amplitude_bound: need N >= 3 points");
  if (out_dim == 0) throw DomainError("amplitude_bound: n must be positive");
  return static_cast<double>(out_dim) * epsilon * epsilon / (8.0 * std::log(static_cast<double>(point_count)));
}

DistortionReport<double> distortion_experiment(const RowMatrix& points, std::size_t out_dim, double amplitude,
                                               double epsilon, std::size_t trials, std::uint64_t seed) {
  const auto eset = difference_set(points);
  const auto m = static_cast<std::size_t>(points.cols());
  DistortionReport<double> total;
  total.epsilon = epsilon;
  total.pairs_per_trial = eset.size();
  for (std::size_t t = 0; t < trials; ++t) {
    const RowMatrix gamma = gaussian_matrix(m, out_dim, amplitude, derive_seed(seed, t));
    total.merge(check_distortion(gamma, eset, epsilon));
  }
  return total;
}

ExpectedNorm expected_norm_check(std::size_t in_dim, std::size_t out_dim, double amplitude,
                                 const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw DomainError("expected_norm_check: samples must be >= 1");
  if (static_cast<std::size_t>(x.size()) != in_dim) throw ShapeError("expected_norm_check: x must have length m");
  const double sq = x.squaredNorm();
  ExpectedNorm out;
  out.theoretical = static_cast<double>(in_dim) * amplitude * sq / static_cast<double>(out_dim);
  out.exact = amplitude * sq;
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const RowMatrix gamma = gaussian_matrix(in_dim, out_dim, amplitude, derive_seed(seed, s));
    acc += (gamma * x).squaredNorm();
  }
  out.empirical_mean = acc / static_cast<double>(samples);
  return out;
}

double corollary_check(const RowMatrix& unit_points, std::size_t out_dim, double amplitude, double epsilon,
                       std::size_t trials, std::uint64_t seed, CorollaryOptions options) {
  const auto count = static_cast<std::size_t>(unit_points.rows());
  const auto m = static_cast<std::size_t>(unit_points.cols());
  if (trials == 0) throw DomainError("corollary_check: trials must be >= 1");
  for (Eigen::Index i = 0; i < unit_points.rows(); ++i) {
    if (std::abs(unit_points.row(i).norm() - 1.0) > 1e-9) {
      throw DomainError("corollary_check: point " + std::to_string(i) + " is not on the unit sphere");
    }
  }
  const double bound = amplitude_bound(epsilon, count, out_dim);
  if (options.enforce_bound && !(amplitude < bound)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "corollary_check: amplitude " << amplitude << " violates lambda/n < eps^2/(8 ln N); need lambda < "
        << bound;
    throw DomainError(msg.str());
  }
  // pad_n(x): first min(m, n) coordinates, zeros after.
  RowMatrix padded = RowMatrix::Zero(unit_points.rows(), static_cast<Eigen::Index>(out_dim));
  const auto shared = static_cast<Eigen::Index>(std::min(m, out_dim));
  padded.leftCols(shared) = unit_points.leftCols(shared);
  std::size_t violations = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const RowMatrix gamma = gaussian_matrix(m, out_dim, amplitude, derive_seed(seed, t));
    const RowMatrix phi = padded + unit_points * gamma.transpose();
    const Eigen::VectorXd residual = (padded - phi).rowwise().norm();
    for (Eigen::Index i = 0; i < residual.size(); ++i) {
      if (residual(i) >= epsilon) ++violations;
    }
  }
  return static_cast<double>(violations) / static_cast<double>(trials * count);
}

double radial_cv(const RowMatrix& points_in, const RowMatrix& points_out) {
  if (points_in.rows() != points_out.rows() || points_in.rows() == 0) throw ShapeError("radial_cv: row mismatch");
  const Eigen::ArrayXd ratio = points_out.rowwise().norm().array() / points_in.rowwise().norm().array();
  const double mu = ratio.mean();
  const double sd = std::sqrt((ratio - mu).square().mean());
  return mu > 0.0 ? sd / mu : 0.0;
}

CircleCloud circle_demo(std::size_t point_count, double amplitude, std::uint64_t seed) {
  if (point_count < 3) throw DomainError("circle_demo: need at least 3 points");
  CircleCloud cloud;
  cloud.lambda = amplitude;
  cloud.points_in.resize(static_cast<Eigen::Index>(point_count), 2);
  for (std::size_t k = 0; k < point_count; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(point_count);
    cloud.points_in(static_cast<Eigen::Index>(k), 0) = std::cos(angle);
    cloud.points_in(static_cast<Eigen::Index>(k), 1) = std::sin(angle);
  }
  const RowMatrix gamma = gaussian_matrix(2, 2, amplitude, seed);
  cloud.points_out = cloud.points_in + cloud.points_in * gamma.transpose();
  cloud.radial_cv = radial_cv(cloud.points_in, cloud.points_out);
  return cloud;
}

}  // namespace rmlp

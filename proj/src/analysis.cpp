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

#include "rmlp/analysis.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <numeric>

#include "rmlp/rng.hpp"

namespace rmlp {

std::size_t grid_side(std::size_t count) {
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(count))));
  if (count == 0 || g * g != count) {
    throw ShapeError("patch token count " + std::to_string(count) + " is not a perfect square");
  }
  return g;
}

namespace {

double log_normal_pdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + d * d / variance);
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

std::array<double, 2> Gmm1d::posterior(double x) const {
  const double a = std::log(weights[0]) + log_normal_pdf(x, means[0], variances[0]);
  const double b = std::log(weights[1]) + log_normal_pdf(x, means[1], variances[1]);
  const double z = log_sum_exp(a, b);
  return {std::exp(a - z), std::exp(b - z)};
}

bool Gmm1d::is_high(double x) const {
  const auto p = posterior(x);
  return p[high_component] > p[1 - high_component];
}

double Gmm1d::log_likelihood_of(std::span<const double> xs) const {
  double ll = 0.0;
  for (double x : xs) {
    ll += log_sum_exp(std::log(weights[0]) + log_normal_pdf(x, means[0], variances[0]),
                      std::log(weights[1]) + log_normal_pdf(x, means[1], variances[1]));
  }
  return ll;
}

Gmm1d fit_gmm_1d(std::span<const double> xs, const EmOptions& options, std::uint64_t seed) {
  const std::size_t n = xs.size();
  if (n < 2) throw DegenerateInputError("fit_gmm_1d: need at least two values");
  const double mu = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
  double total_var = 0.0;
  for (double x : xs) total_var += (x - mu) * (x - mu);
  total_var /= static_cast<double>(n);
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  if (*lo == *hi || !(total_var > 0.0)) throw DegenerateInputError("fit_gmm_1d: all statistics are equal");
  const double var_floor = 1e-6 * total_var;

  // k-means++ seeding: one uniform pick, the second with probability ~ D^2.
  Xoshiro256 rng(seed);
  const double c0 = xs[rng.below(n)];
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (xs[i] - c0) * (xs[i] - c0);
  const double d2_total = std::accumulate(d2.begin(), d2.end(), 0.0);
  double target = rng.uniform() * d2_total;
  std::size_t pick = n - 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (d2[i] > 0.0 && target < d2[i]) {
      pick = i;
      break;
    }
    target -= d2[i];
  }
  while (d2[pick] == 0.0) --pick;  // rounding can leave the cursor on a zero-weight value
  const double c1 = xs[pick];

  Gmm1d gmm;
  {
    std::array<double, 2> count{}, sum{}, sq{};
    for (double x : xs) {
      const std::size_t k = std::abs(x - c0) <= std::abs(x - c1) ? 0 : 1;
      count[k] += 1.0;
      sum[k] += x;
      sq[k] += x * x;
    }
    for (std::size_t k = 0; k < 2; ++k) {
      gmm.means[k] = sum[k] / count[k];
      gmm.variances[k] = std::max(sq[k] / count[k] - gmm.means[k] * gmm.means[k], var_floor);
      gmm.weights[k] = count[k] / static_cast<double>(n);
    }
  }

  std::vector<double> resp(n);
  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    double ll = 0.0;
    const double lw0 = std::log(gmm.weights[0]), lw1 = std::log(gmm.weights[1]);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = lw0 + log_normal_pdf(xs[i], gmm.means[0], gmm.variances[0]);
      const double b = lw1 + log_normal_pdf(xs[i], gmm.means[1], gmm.variances[1]);
      const double z = log_sum_exp(a, b);
      ll += z;
      resp[i] = std::exp(b - z);
    }
    gmm.log_likelihood.push_back(ll);
    gmm.iterations = it + 1;

    std::array<double, 2> nk{}, sx{};
    for (std::size_t i = 0; i < n; ++i) {
      nk[1] += resp[i];
      nk[0] += 1.0 - resp[i];
      sx[1] += resp[i] * xs[i];
      sx[0] += (1.0 - resp[i]) * xs[i];
    }
    if (!(nk[0] > 0.0) || !(nk[1] > 0.0)) throw DegenerateInputError("fit_gmm_1d: a mixture component emptied");
    for (std::size_t k = 0; k < 2; ++k) gmm.means[k] = sx[k] / nk[k];
    std::array<double, 2> sv{};
    for (std::size_t i = 0; i < n; ++i) {
      const double d0 = xs[i] - gmm.means[0], d1 = xs[i] - gmm.means[1];
      sv[0] += (1.0 - resp[i]) * d0 * d0;
      sv[1] += resp[i] * d1 * d1;
    }
    for (std::size_t k = 0; k < 2; ++k) {
      gmm.variances[k] = std::max(sv[k] / nk[k], var_floor);
      gmm.weights[k] = nk[k] / static_cast<double>(n);
    }
    if (std::abs(ll - previous) <= options.tolerance * std::abs(previous)) break;
    previous = ll;
  }
  gmm.high_component = gmm.means[1] > gmm.means[0] ? 1 : 0;
  return gmm;
}

RowMatrix gradient_magnitude(const RowMatrix& image) {
  const Eigen::Index h = image.rows(), w = image.cols();
  RowMatrix out(h, w);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      const double gx = 0.5 * (image(i, std::min(j + 1, w - 1)) - image(i, std::max<Eigen::Index>(j - 1, 0)));
      const double gy = 0.5 * (image(std::min(i + 1, h - 1), j) - image(std::max<Eigen::Index>(i - 1, 0), j));
      out(i, j) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

RowMatrix gaussian_blur(const RowMatrix& image, double sigma) {
  if (!(sigma > 0.0)) return image;
  const auto radius = static_cast<Eigen::Index>(std::ceil(3.0 * sigma));
  Eigen::VectorXd kernel(2 * radius + 1);
  for (Eigen::Index k = -radius; k <= radius; ++k) {
    kernel(k + radius) = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  kernel /= kernel.sum();
  const Eigen::Index h = image.rows(), w = image.cols();
  RowMatrix horizontal(h, w), out(h, w);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      double acc = 0.0;
      for (Eigen::Index k = -radius; k <= radius; ++k) {
        acc += kernel(k + radius) * image(i, std::clamp<Eigen::Index>(j + k, 0, w - 1));
      }
      horizontal(i, j) = acc;
    }
  }
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      double acc = 0.0;
      for (Eigen::Index k = -radius; k <= radius; ++k) {
        acc += kernel(k + radius) * horizontal(std::clamp<Eigen::Index>(i + k, 0, h - 1), j);
      }
      out(i, j) = acc;
    }
  }
  return out;
}

RowMatrix patch_means(const RowMatrix& image, std::size_t patch_size) {
  const auto p = static_cast<Eigen::Index>(patch_size);
  if (p == 0 || image.rows() % p != 0 || image.cols() % p != 0) {
    throw ShapeError("patch_means: image dimensions must be divisible by the patch size");
  }
  RowMatrix out(image.rows() / p, image.cols() / p);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = image.block(r * p, c * p, p, p).mean();
  }
  return out;
}

PatchSplit gmm_patch_split(const RowMatrix& image, std::size_t patch_size, double smoothing_sigma,
                           std::size_t em_iters, std::uint64_t seed) {
  PatchSplit split;
  split.statistic = patch_means(gaussian_blur(gradient_magnitude(image), smoothing_sigma), patch_size);
  const std::span<const double> values(split.statistic.data(), static_cast<std::size_t>(split.statistic.size()));
  split.gmm = fit_gmm_1d(values, EmOptions{em_iters, 1e-8}, seed);
  split.labels.resize(split.statistic.rows(), split.statistic.cols());
  for (Eigen::Index i = 0; i < split.statistic.size(); ++i) {
    split.labels.data()[i] = split.gmm.is_high(split.statistic.data()[i]);
  }
  return split;
}

std::vector<CurvePoint> norm_proportion_curve(std::span<const AttentionMap> maps) {
  if (maps.empty()) throw DomainError("norm_proportion_curve: no maps");
  std::vector<double> pooled;
  for (const AttentionMap& m : maps) pooled.insert(pooled.end(), m.grid.data(), m.grid.data() + m.grid.size());
  std::sort(pooled.begin(), pooled.end(), std::greater<>());
  std::vector<CurvePoint> curve(pooled.size());
  const double total = static_cast<double>(pooled.size());
  for (std::size_t k = 0; k < pooled.size(); ++k) curve[k] = {static_cast<double>(k + 1) / total, pooled[k]};
  return curve;
}

namespace {

Histogram histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  Histogram h{lo, hi, std::vector<double>(bins, 0.0)};
  const double width = h.bin_width();
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
    h.density[std::min(b, bins - 1)] += 1.0;
  }
  for (double& d : h.density) d /= static_cast<double>(values.size()) * width;
  return h;
}

}  // namespace

SplitDensities split_densities(std::span<const AttentionMap> maps, std::span<const BoolGrid> splits, std::size_t bins) {
  if (maps.size() != splits.size()) throw ShapeError("split_densities: maps and splits are not aligned");
  if (bins == 0) throw DomainError("split_densities: need at least one bin");
  std::vector<double> low, high;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const RowMatrix& grid = maps[k].grid;
    if (grid.rows() != splits[k].rows() || grid.cols() != splits[k].cols()) {
      throw ShapeError("split_densities: split grid does not match its map");
    }
    for (Eigen::Index i = 0; i < grid.size(); ++i) (splits[k].data()[i] ? high : low).push_back(grid.data()[i]);
  }
  if (low.empty() || high.empty()) throw DomainError("split_densities: one information class is empty");
  double lo = std::min(*std::min_element(low.begin(), low.end()), *std::min_element(high.begin(), high.end()));
  double hi = std::max(*std::max_element(low.begin(), low.end()), *std::max_element(high.begin(), high.end()));
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  SplitDensities out;
  out.low = histogram(low, lo, hi, bins);
  out.high = histogram(high, lo, hi, bins);
  out.low_mean = std::accumulate(low.begin(), low.end(), 0.0) / static_cast<double>(low.size());
  out.high_mean = std::accumulate(high.begin(), high.end(), 0.0) / static_cast<double>(high.size());
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: sequences must have equal, non-zero length");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw DomainError("pearson: correlation undefined for a constant sequence");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

BoolGrid top_quarter_indicator(const AttentionMap& map) {
  const auto count = static_cast<std::size_t>(map.grid.size());
  const std::size_t keep = (count + 3) / 4;
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.grid.data()[a] > map.grid.data()[b]; });
  BoolGrid indicator = BoolGrid::Constant(map.grid.rows(), map.grid.cols(), false);
  for (std::size_t k = 0; k < keep; ++k) indicator.data()[order[k]] = true;
  return indicator;
}

double top_norm_correlation(const AttentionMap& map, const BoolGrid& presence) {
  if (presence.rows() != map.grid.rows() || presence.cols() != map.grid.cols()) {
    throw ShapeError("top_norm_correlation: mask shape does not match the map");
  }
  const BoolGrid top = top_quarter_indicator(map);
  std::vector<double> a(static_cast<std::size_t>(top.size())), b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = top.data()[i] ? 1.0 : 0.0;
    b[i] = presence.data()[i] ? 1.0 : 0.0;
  }
  return pearson(a, b);
}

}  // namespace rmlp

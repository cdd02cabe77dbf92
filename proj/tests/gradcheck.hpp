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

// Central-difference gradient oracle shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "rmlp/rng.hpp"
#include "rmlp/tensor.hpp"

namespace rmlp::testing {

struct Coordinate {
  Tensor leaf;
  std::size_t index;
};

struct GradCheck {
  std::vector<double> analytic;
  std::vector<double> numeric;
  // |a - n|_2 / max(|a|_2, |n|_2), or 0 when both vanish.
  double relative_error() const {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double scale = std::sqrt(std::max(na, nn));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
  }
  // Largest per-coordinate |a - n| / max(|a|, |n|, floor).
  double max_elementwise(double floor) const {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double s = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / s);
    }
    return worst;
  }
};

// `loss` must rebuild the graph from the current leaf values on every call.
inline GradCheck check_gradient(const std::function<Tensor()>& loss, const std::vector<Coordinate>& coords,
                                double step = 1e-5) {
  std::vector<Tensor> leaves;
  for (const Coordinate& c : coords) {
    if (std::none_of(leaves.begin(), leaves.end(), [&](const Tensor& t) { return t.same_node(c.leaf); })) {
      leaves.push_back(c.leaf);
    }
  }
  GradCheck out;
  const Tensor l = loss();
  grad(l, leaves);
  for (const Coordinate& c : coords) out.analytic.push_back(c.leaf.grad()[c.index]);
  for (Tensor& t : leaves) t.clear_grad();
  for (Coordinate c : coords) {
    double& v = c.leaf.mutable_data()[c.index];
    const double saved = v;
    v = saved + step;
    const double up = loss().item();
    v = saved - step;
    const double down = loss().item();
    v = saved;
    out.numeric.push_back((up - down) / (2.0 * step));
  }
  return out;
}

inline std::vector<Coordinate> all_coordinates(const std::vector<Tensor>& leaves) {
  std::vector<Coordinate> out;
  for (const Tensor& t : leaves) {
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back({t, i});
  }
  return out;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true, double scale = 1.0) {
  Xoshiro256 rng(seed);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.gaussian();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace rmlp::testing

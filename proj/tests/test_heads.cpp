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

#include <cmath>
#include <cstring>

#include <doctest.h>

#include "gradcheck.hpp"
#include "rmlp/error.hpp"
#include "rmlp/heads.hpp"
#include "rmlp/rng.hpp"

using namespace rmlp;
using rmlp::testing::all_coordinates;
using rmlp::testing::check_gradient;
using rmlp::testing::random_tensor;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), 8 * a.size()) == 0;
}

HeadSpec rmlp_spec(std::vector<std::size_t> dims, double lambda, std::uint64_t seed = 5) {
  return HeadSpec{std::move(dims), Activation::GELU, HeadKind::RMLP, lambda, seed};
}

}  // namespace

TEST_CASE("sample_gaussian_matrix") {
  const Tensor z = sample_gaussian_matrix(3, 4, 0.0, 1);
  CHECK(z.shape() == Shape{4, 3});
  for (double v : z.data()) CHECK(v == 0.0);
  CHECK_FALSE(z.requires_grad());

  CHECK(bitwise_equal(sample_gaussian_matrix(7, 5, 2.0, 99), sample_gaussian_matrix(7, 5, 2.0, 99)));
  CHECK_FALSE(bitwise_equal(sample_gaussian_matrix(7, 5, 2.0, 99), sample_gaussian_matrix(7, 5, 2.0, 100)));

  // Entries are sqrt(lambda / n) times the documented Gaussian stream.
  Xoshiro256 rng(17);
  const Tensor g = sample_gaussian_matrix(3, 2, 4.0, 17);
  for (double v : g.data()) CHECK(v == std::sqrt(4.0 / 2.0) * rng.gaussian());

  // Variance over 10^6 entries (245 matrices of 64 x 64).
  double s1 = 0.0, s2 = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; count < 1000000; ++seed) {
    const RowMatrix m = gaussian_matrix(64, 64, 5.0, seed);
    s1 += m.sum();
    s2 += m.squaredNorm();
    count += static_cast<std::size_t>(m.size());
  }
  const double mean = s1 / count;
  const double var = s2 / count - mean * mean;
  CHECK(std::abs(var / (5.0 / 64.0) - 1.0) < 0.02);
}

TEST_CASE("rle_apply truncates or pads") {
  const RandomizedLayer down = RandomizedLayer::create(4, 2, 0.0, 1);
  const Tensor y = rle_apply(down, Tensor({1, 4}, {1, 2, 3, 4}));
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(0, 1) == 2.0);

  const RandomizedLayer up = RandomizedLayer::create(2, 4, 0.0, 1);
  const Tensor p = rle_apply(up, Tensor({1, 2}, {1, 2}));
  CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{1, 2, 0, 0});

  CHECK_THROWS_AS(rle_apply(up, Tensor::zeros({1, 3})), ShapeError);
}

TEST_CASE("rle_apply equals pad plus Gamma x") {
  const RandomizedLayer layer = RandomizedLayer::create(5, 7, 2.0, 3);
  const Tensor x = random_tensor({3, 5}, 4, false);
  const RowMatrix y = rle_apply(layer, x).to_matrix();
  const RowMatrix g = gaussian_matrix(5, 7, 2.0, 3);
  RowMatrix expect = x.to_matrix() * g.transpose();
  expect.leftCols(5) += x.to_matrix();
  CHECK((y - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("second moment of Gamma x follows lambda |x|^2") {
  // Independent estimate from fresh layers; the closed form m*lambda/n only
  // holds when m == n.
  const std::size_t m = 64, n = 32;
  const double lambda = 5.0;
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(m, -1.0, 1.0);
  x.normalize();
  double acc = 0.0;
  const int samples = 20000;
  for (int s = 0; s < samples; ++s) acc += (gaussian_matrix(m, n, lambda, 1000 + s) * x).squaredNorm();
  const double mean = acc / samples;
  // sd of |Gamma x|^2 is lambda * sqrt(2 / n); 5 standard errors.
  CHECK(std::abs(mean - lambda) < 5.0 * lambda * std::sqrt(2.0 / n) / std::sqrt(samples));
}

TEST_CASE("head spec validation and counting") {
  HeadSpec full{{384, 1536, 256, 65536}, Activation::GELU, HeadKind::RMLP, 5.0, 1};
  CHECK_NOTHROW(full.validate());
  CHECK(full.trainable_parameter_count() == 0);
  full.kind = HeadKind::MLP;
  full.amplitude.reset();
  CHECK_NOTHROW(full.validate());
  CHECK(full.trainable_parameter_count() == 384u * 1536 + 1536u * 256 + 256u * 65536);

  HeadSpec bad = full;
  bad.amplitude = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(rmlp_spec({8}, 1.0).validate(), ConfigError);
  CHECK_THROWS_AS(rmlp_spec({8, 0}, 1.0).validate(), ConfigError);
  CHECK_THROWS_AS(rmlp_spec({8, 4}, -1.0).validate(), ConfigError);
  HeadSpec missing = rmlp_spec({8, 4}, 1.0);
  missing.amplitude.reset();
  CHECK_THROWS_AS(missing.validate(), ConfigError);

  CHECK(parse_head_kind("rmlp") == HeadKind::RMLP);
  CHECK(parse_head_kind("mlp") == HeadKind::MLP);
  CHECK(to_string(HeadKind::RMLP) == "rmlp");

  const Head r = build_head(rmlp_spec({6, 10, 3}, 2.0));
  CHECK(r.trainable_parameter_count() == 0);
  CHECK(r.weights().empty());
  HeadSpec ms{{6, 10, 3}, Activation::GELU, HeadKind::MLP, std::nullopt, 2};
  const Head mh = build_head(ms);
  CHECK(mh.trainable_parameter_count() == 6 * 10 + 10 * 3);
  CHECK(mh.randomized_layers().empty());
}

TEST_CASE("zero-amplitude RMLP is GELU between identities") {
  const Head h = build_head(rmlp_spec({8, 8, 8}, 0.0));
  const Tensor x = random_tensor({3, 8}, 9, false);
  const Tensor y = h.forward(x);
  const Tensor expect = gelu(x);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == expect.data()[i]);

  const Head h4 = build_head(rmlp_spec({4, 4, 4, 4}, 0.0));
  const Tensor x4 = Tensor::from_matrix(x.to_matrix().leftCols(4));
  const Tensor y4 = h4.forward(x4);
  const Tensor e4 = gelu(gelu(x4));
  for (std::size_t i = 0; i < y4.size(); ++i) CHECK(y4.data()[i] == e4.data()[i]);

  const Head z = build_head(rmlp_spec({8, 16, 4}, 0.0));
  const Tensor zo = z.forward(Tensor::zeros({1, 8}));
  for (double v : zo.data()) CHECK(v == 0.0);
}

TEST_CASE("RMLP layers use derived seeds") {
  const HeadSpec spec = rmlp_spec({6, 10, 3}, 2.0, 77);
  const Head h = build_head(spec);
  REQUIRE(h.randomized_layers().size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const RandomizedLayer& l = h.randomized_layers()[i];
    CHECK(l.seed == splitmix64(77 ^ i));
    CHECK(bitwise_equal(l.gamma, sample_gaussian_matrix(spec.dims[i], spec.dims[i + 1], 2.0, l.seed)));
  }
  // Same spec, same outputs.
  const Tensor x = random_tensor({2, 6}, 3, false);
  CHECK(bitwise_equal(h.forward(x), build_head(spec).forward(x)));
}

TEST_CASE("RMLP propagates input gradients and keeps Gamma frozen") {
  const Head h = build_head(rmlp_spec({6, 10, 3}, 3.0));
  std::vector<Tensor> before;
  for (const RandomizedLayer& l : h.randomized_layers()) before.push_back(l.gamma.clone(false));

  Tensor x = random_tensor({4, 6}, 12);
  const Tensor w = random_tensor({4, 3}, 13, false);
  auto f = [&] { return sum(mul(h.forward(x), w)); };
  CHECK(check_gradient(f, all_coordinates({x})).relative_error() < 1e-5);

  backward(f());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(bitwise_equal(before[i], h.randomized_layers()[i].gamma));
    CHECK_FALSE(h.randomized_layers()[i].gamma.has_grad());
  }
  CHECK_THROWS_AS(h.forward(Tensor::zeros({1, 5})), ShapeError);
}

TEST_CASE("MLP head weights are trainable") {
  HeadSpec ms{{5, 7, 2}, Activation::GELU, HeadKind::MLP, std::nullopt, 4};
  const Head h = build_head(ms);
  REQUIRE(h.weights().size() == 2);
  CHECK(h.weights()[0].shape() == Shape{5, 7});
  const double bound = std::sqrt(6.0 / 5.0);
  for (double v : h.weights()[0].data()) CHECK(std::abs(v) <= bound);
  const Tensor x = random_tensor({3, 5}, 8, false);
  auto f = [&] { return sum(square(h.forward(x))); };
  CHECK(check_gradient(f, all_coordinates(h.weights())).relative_error() < 1e-5);

  const Head c = h.copy(false);
  CHECK_FALSE(c.weights()[0].same_node(h.weights()[0]));
  CHECK(bitwise_equal(c.weights()[0], h.weights()[0]));
}

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
#include <numeric>

#include <doctest.h>

#include "gradcheck.hpp"
#include "rmlp/error.hpp"
#include "rmlp/vit.hpp"

using namespace rmlp;
using rmlp::testing::all_coordinates;
using rmlp::testing::check_gradient;
using rmlp::testing::random_tensor;

namespace {

ViTConfig small_config() {
  ViTConfig cfg;
  cfg.image_size = 28;
  cfg.patch_size = 14;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.prototype_dim = 16;
  cfg.dino_head.dims = {8, 16, 8, 16};
  cfg.ibot_head.dims = {8, 16, 8, 16};
  return cfg;
}

void fill(Tensor t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

RowMatrix layer_norm_ref(const RowMatrix& x, const Tensor& g, const Tensor& b, double eps) {
  RowMatrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out(i, j) = (x(i, j) - mu) / std::sqrt(var + eps) * g.data()[j] + b.data()[j];
    }
  }
  return out;
}

// Loop-level pre-LN block.
RowMatrix block_ref(const Block& b, const RowMatrix& x, std::size_t heads, double eps) {
  const Eigen::Index t = x.rows(), d = x.cols(), hd = d / static_cast<Eigen::Index>(heads);
  const RowMatrix h = layer_norm_ref(x, b.norm1_gain, b.norm1_bias, eps);
  const RowMatrix q = h * b.query.to_matrix(), k = h * b.key.to_matrix(), v = h * b.value.to_matrix();
  RowMatrix merged(t, d);
  for (Eigen::Index hh = 0; hh < static_cast<Eigen::Index>(heads); ++hh) {
    for (Eigen::Index i = 0; i < t; ++i) {
      std::vector<double> s(t);
      double mx = -INFINITY;
      for (Eigen::Index j = 0; j < t; ++j) {
        double dot = 0.0;
        for (Eigen::Index c = 0; c < hd; ++c) dot += q(i, hh * hd + c) * k(j, hh * hd + c);
        s[j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (Eigen::Index c = 0; c < hd; ++c) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < t; ++j) acc += s[j] / z * v(j, hh * hd + c);
        merged(i, hh * hd + c) = acc;
      }
    }
  }
  const RowMatrix y = x + merged * b.attn_out.to_matrix();
  RowMatrix a = layer_norm_ref(y, b.norm2_gain, b.norm2_bias, eps) * b.fc1.to_matrix();
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double u = a.data()[i];
    a.data()[i] = u * 0.5 * (1.0 + std::erf(u / std::sqrt(2.0)));
  }
  return y + a * b.fc2.to_matrix();
}

double ce_oracle(const RowMatrix& s, const RowMatrix& t, const Eigen::RowVectorXd& c, double ts, double tt) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::RowVectorXd p = ((t.row(i) - c) / tt).array().exp();
    p /= p.sum();
    const Eigen::RowVectorXd ls = s.row(i) / ts;
    const double lse = std::log(ls.array().exp().sum());
    for (Eigen::Index k = 0; k < s.cols(); ++k) total -= p(k) * (ls(k) - lse);
  }
  return total / static_cast<double>(s.rows());
}

}  // namespace

TEST_CASE("config validation") {
  ViTConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK_NOTHROW(ViTConfig{}.validate());
  ViTConfig bad = cfg;
  bad.image_size = 30;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.mask_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.dino_head.dims.back() = 17;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("tokenize shapes and layout") {
  const ViTConfig cfg = small_config();
  const ViTModel model = init_vit(cfg, 1);
  CHECK(cfg.num_patches() == 4);
  const Tensor img = random_tensor({28, 28}, 2, false);
  CHECK(tokenize(model, img, cfg).shape() == Shape{5, 8});
  CHECK(vit_forward(model, img, cfg).shape() == Shape{5, 8});
  CHECK(tokenize(model, Tensor::zeros({1, 28, 28}), cfg).shape() == Shape{5, 8});

  ViTConfig big = cfg;
  big.image_size = 224;
  const ViTModel bm = init_vit(big, 1);
  CHECK(big.num_patches() == 256);
  CHECK(tokenize(bm, Tensor::zeros({224, 224}), big).shape() == Shape{257, 8});

  // Patch k covers grid cell (k / g, k % g), flattened row-major.
  std::vector<double> ramp(28 * 28);
  std::iota(ramp.begin(), ramp.end(), 0.0);
  const Tensor patches = patchify(Tensor({28, 28}, ramp), cfg);
  CHECK(patches.shape() == Shape{4, 196});
  CHECK(patches.at(0, 0) == 0.0);
  CHECK(patches.at(0, 14) == 28.0);
  CHECK(patches.at(1, 0) == 14.0);
  CHECK(patches.at(2, 0) == 14.0 * 28.0);
  CHECK(patches.at(3, 195) == 27.0 * 28.0 + 27.0);

  CHECK_THROWS_AS(tokenize(model, Tensor::zeros({27, 27}), cfg), ShapeError);
  ViTConfig odd = cfg;
  odd.image_size = 30;
  CHECK_THROWS_AS(patchify(Tensor::zeros({30, 30}), odd), ShapeError);
}

TEST_CASE("zero image and projection give positional embeddings") {
  const ViTConfig cfg = small_config();
  ViTModel model = init_vit(cfg, 3);
  fill(model.patch_projection, 0.0);
  const RowMatrix tok = tokenize(model, Tensor::zeros({28, 28}), cfg).to_matrix();
  RowMatrix expect = model.positional_embedding.to_matrix();
  expect.row(0) += model.class_token.matrix();
  CHECK((tok - expect).cwiseAbs().maxCoeff() == 0.0);

  // Masked patches carry the mask token instead of their projection.
  const std::vector<bool> mask{false, true, false, false};
  const Tensor img = random_tensor({28, 28}, 4, false);
  const RowMatrix masked = tokenize(model, img, cfg, mask).to_matrix();
  CHECK((masked.row(2) - model.positional_embedding.matrix().row(2) - model.mask_token.matrix()).norm() < 1e-15);
}

TEST_CASE("zeroed block is the identity") {
  const ViTConfig cfg = small_config();
  ViTModel model = init_vit(cfg, 5);
  Block& b = model.blocks[0];
  for (Tensor t : {b.query, b.key, b.value, b.attn_out, b.fc1, b.fc2, b.norm1_gain, b.norm1_bias, b.norm2_gain,
                   b.norm2_bias}) {
    fill(t, 0.0);
  }
  const Tensor x = random_tensor({5, 8}, 6, false);
  const Tensor y = block_forward(b, x, cfg.heads);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);

  // Only the output projections zeroed is enough.
  ViTModel m2 = init_vit(cfg, 5);
  fill(m2.blocks[1].attn_out, 0.0);
  fill(m2.blocks[1].fc2, 0.0);
  const Tensor y2 = block_forward(m2.blocks[1], x, cfg.heads);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y2.data()[i] == x.data()[i]);
}

TEST_CASE("block matches a loop-level oracle") {
  const ViTConfig cfg = small_config();
  const ViTModel model = init_vit(cfg, 7);
  const Block& b = model.blocks[1];
  // Non-trivial norms.
  for (Tensor t : {b.norm1_gain, b.norm1_bias, b.norm2_gain, b.norm2_bias}) {
    Xoshiro256 rng(t.size() + 31);
    for (double& v : t.mutable_data()) v += 0.3 * rng.gaussian();
  }
  const Tensor x = random_tensor({5, 8}, 8, false);
  AttentionTrace trace;
  const RowMatrix y = block_forward(b, x, cfg.heads, cfg.layer_norm_eps, &trace).to_matrix();
  CHECK((y - block_ref(b, x.to_matrix(), cfg.heads, cfg.layer_norm_eps)).cwiseAbs().maxCoeff() < 1e-12);

  REQUIRE(trace.heads.size() == 2);
  for (const RowMatrix& a : trace.heads) {
    CHECK(a.rows() == 5);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
    CHECK(a.minCoeff() >= 0.0);
  }
}

TEST_CASE("blocks are permutation equivariant") {
  const ViTConfig cfg = small_config();
  const ViTModel model = init_vit(cfg, 9);
  const Tensor x = random_tensor({5, 8}, 10, false);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const RowMatrix a = select_rows(block_forward(model.blocks[0], x, cfg.heads), perm).to_matrix();
  const RowMatrix b = block_forward(model.blocks[0], select_rows(x, perm), cfg.heads).to_matrix();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);

  // Whole model with positional embeddings zeroed: swapping two patches of
  // the image swaps their output tokens and leaves the class token alone.
  ViTModel flat = init_vit(cfg, 11);
  fill(flat.positional_embedding, 0.0);
  RowMatrix img = random_tensor({28, 28}, 12, false).to_matrix();
  RowMatrix swapped = img;
  swapped.block(0, 0, 14, 14) = img.block(14, 14, 14, 14);
  swapped.block(14, 14, 14, 14) = img.block(0, 0, 14, 14);
  const RowMatrix o1 = vit_forward(flat, Tensor::from_matrix(img), cfg).to_matrix();
  const RowMatrix o2 = vit_forward(flat, Tensor::from_matrix(swapped), cfg).to_matrix();
  CHECK((o1.row(0) - o2.row(0)).norm() < 1e-12);
  CHECK((o1.row(1) - o2.row(4)).norm() < 1e-12);
  CHECK((o1.row(4) - o2.row(1)).norm() < 1e-12);
  CHECK((o1.row(2) - o2.row(2)).norm() < 1e-12);
}

TEST_CASE("backbone gradients match finite differences") {
  const ViTConfig cfg = small_config();
  const ViTModel model = init_vit(cfg, 13);
  const Tensor img = random_tensor({28, 28}, 14, false);
  const Tensor w = random_tensor({5, 8}, 15, false);
  auto f = [&] { return sum(mul(vit_forward(model, img, cfg), w)); };
  std::vector<rmlp::testing::Coordinate> coords;
  for (const NamedTensor& nt : named_tensors(model, "")) {
    for (std::size_t i = 0; i < nt.tensor.size(); i += 7) coords.push_back({nt.tensor, i});
  }
  CHECK(check_gradient(f, coords).relative_error() < 1e-5);
}

TEST_CASE("koleo closed forms") {
  CHECK(std::abs(koleo_loss(Tensor({2, 1}, {0, 1})).item()) < 1e-10);
  const double e = std::exp(1.0);
  CHECK(std::abs(koleo_loss(Tensor({3, 1}, {0, e, 2 * e})).item() + 1.0) < 1e-10);
  CHECK(std::abs(koleo_loss(Tensor::vector({0, e, 2 * e})).item() + 1.0) < 1e-10);
  CHECK_THROWS_AS(koleo_loss(Tensor({3, 2}, {1, 2, 0, 0, 1, 2})), DegenerateInputError);
  CHECK_THROWS_AS(koleo_loss(Tensor({1, 2}, {1, 2})), DomainError);

  Tensor x = random_tensor({8, 16}, 16);
  auto f = [&] { return koleo_loss(x); };
  CHECK(check_gradient(f, all_coordinates({x})).relative_error() < 1e-5);
}

TEST_CASE("dino loss") {
  const std::size_t K = 32;
  const Tensor zeros = Tensor::zeros({K});
  CHECK(dino_loss(zeros, zeros, zeros, 0.1, 0.04).item() == doctest::Approx(std::log(32.0)).epsilon(1e-12));

  // Aligned one-hot limit.
  std::vector<double> sharp(K, 0.0);
  sharp[5] = 1.0;
  const Tensor t = Tensor::vector(sharp);
  CHECK(dino_loss(t, t, zeros, 1e-3, 1e-3).item() < 1e-10);

  const Tensor s = random_tensor({3, K}, 17);
  const Tensor tl = random_tensor({3, K}, 18, true);
  const Tensor c = random_tensor({K}, 19, false, 0.1);
  const double got = dino_loss(s, tl, c, 0.1, 0.04).item();
  CHECK(std::abs(got - ce_oracle(s.to_matrix(), tl.to_matrix(), c.matrix(), 0.1, 0.04)) < 1e-10);

  backward(dino_loss(s, tl, c, 0.1, 0.04));
  CHECK(s.has_grad());
  CHECK_FALSE(tl.has_grad());

  Tensor sg = random_tensor({2, K}, 20);
  const Tensor t2 = Tensor::from_matrix(tl.to_matrix().topRows(2));
  auto f = [&] { return dino_loss(sg, t2, c, 0.1, 0.04); };
  CHECK(check_gradient(f, all_coordinates({sg})).relative_error() < 1e-5);
  CHECK_THROWS_AS(dino_loss(zeros, zeros, zeros, 0.0, 0.04), DomainError);
}

TEST_CASE("ibot loss") {
  const std::size_t K = 16, P = 4;
  const Tensor zeros = Tensor::zeros({K});
  // Same logits in every patch row.
  const Tensor row = random_tensor({1, K}, 21, false);
  const std::vector<Tensor> rows(P, row);
  const Tensor same = concat_rows(rows);
  const Tensor tsame = concat_rows(std::vector<Tensor>(P, random_tensor({1, K}, 22, false)));
  const double all = ibot_loss(same, tsame, {true, true, true, true}, zeros, 0.1, 0.04).item();
  const double one = ibot_loss(same, tsame, {false, false, true, false}, zeros, 0.1, 0.04).item();
  CHECK(all == doctest::Approx(one).epsilon(1e-14));

  std::vector<double> sharp(P * K, 0.0);
  for (std::size_t p = 0; p < P; ++p) sharp[p * K + p] = 1.0;
  const Tensor sh({P, K}, sharp);
  CHECK(ibot_loss(sh, sh, {false, true, false, false}, zeros, 1e-3, 1e-3).item() < 1e-10);

  const Tensor s = random_tensor({P, K}, 23);
  const Tensor t = random_tensor({P, K}, 24, false);
  const Tensor c = random_tensor({K}, 25, false, 0.1);
  const std::vector<bool> mask{true, false, true, false};
  RowMatrix sm(2, K), tm(2, K);
  sm << s.to_matrix().row(0), s.to_matrix().row(2);
  tm << t.to_matrix().row(0), t.to_matrix().row(2);
  CHECK(std::abs(ibot_loss(s, t, mask, c, 0.1, 0.04).item() - ce_oracle(sm, tm, c.matrix(), 0.1, 0.04)) < 1e-10);

  CHECK_THROWS_AS(ibot_loss(s, t, {false, false, false, false}, c, 0.1, 0.04), DomainError);
  CHECK_THROWS_AS(ibot_loss(s, t, {true}, c, 0.1, 0.04), ShapeError);
}

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
#include <set>

#include <doctest.h>

#include "gradcheck.hpp"
#include "rmlp/error.hpp"
#include "rmlp/io.hpp"
#include "rmlp/train.hpp"

using namespace rmlp;
using rmlp::testing::random_tensor;

namespace {

ViTConfig tiny_model(HeadKind kind = HeadKind::RMLP) {
  ViTConfig cfg;
  cfg.image_size = 28;
  cfg.patch_size = 14;
  cfg.embed_dim = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.prototype_dim = 32;
  for (HeadSpec* h : {&cfg.dino_head, &cfg.ibot_head}) {
    h->dims = {16, 32, 16, 32};
    h->kind = kind;
    if (kind == HeadKind::MLP) h->amplitude.reset();
  }
  return cfg;
}

std::vector<Tensor> tiny_images(std::size_t count, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.count = count;
  spec.image_size = 28;
  spec.patch_size = 14;
  spec.seed = seed;
  return gen_synthetic(spec).images;
}

std::vector<std::vector<double>> snapshot(const Network& net) {
  std::vector<std::vector<double>> out;
  for (const NamedTensor& nt : named_tensors(net, "")) out.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("ema_update") {
  const ViTConfig cfg = tiny_model();
  Network student = build_network(cfg, 1);
  Network teacher = copy_network(student, false);
  Tensor s = student.backbone.class_token, t = teacher.backbone.class_token;
  CHECK_FALSE(s.same_node(t));
  s.mutable_data()[0] = 4.0;
  t.mutable_data()[0] = 2.0;
  ema_update(teacher, student, 0.5);
  CHECK(t.data()[0] == 3.0);
  const auto before = snapshot(teacher);
  ema_update(teacher, student, 1.0);
  CHECK(snapshot(teacher) == before);
  ema_update(teacher, student, 0.0);
  CHECK(snapshot(teacher) == snapshot(student));
  CHECK_THROWS_AS(ema_update(teacher, student, 1.5), DomainError);

  // Randomized layers are the same buffers in both networks.
  REQUIRE_FALSE(teacher.dino_head.randomized_layers().empty());
  CHECK(teacher.dino_head.randomized_layers()[0].gamma.same_node(student.dino_head.randomized_layers()[0].gamma));
}

TEST_CASE("named tensors flag frozen buffers") {
  const Network r = build_network(tiny_model(), 2);
  std::size_t frozen = 0;
  for (const NamedTensor& nt : named_tensors(r, "")) {
    if (nt.frozen) {
      ++frozen;
      CHECK_FALSE(nt.tensor.requires_grad());
      CHECK(nt.name.find("gamma") != std::string::npos);
    }
  }
  CHECK(frozen == 6);
  const Network m = build_network(tiny_model(HeadKind::MLP), 2);
  for (const NamedTensor& nt : named_tensors(m, "")) CHECK_FALSE(nt.frozen);
  CHECK(trainable_parameters(m).size() == trainable_parameters(r).size() + 6);
}

TEST_CASE("AdamW matches a hand-rolled update") {
  Tensor p = Tensor::vector({1.0, -2.0}, true);
  std::vector<Tensor> params{p};
  AdamW opt(params);
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
  for (int t = 1; t <= 3; ++t) {
    grad(sum(square(p)), params);
    const double g[2] = {p.grad()[0], p.grad()[1]};
    opt.step(params, lr, b1, b2, eps, wd);
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * w[i]);
      CHECK(p.data()[i] == doctest::Approx(w[i]).epsilon(1e-14));
    }
  }
  CHECK(opt.steps() == 3);
}

TEST_CASE("plateau scheduler") {
  PlateauScheduler s(1.0, 0.1, 3, 0.4);
  s.end_epoch(10.0);
  for (int i = 0; i < 3; ++i) s.end_epoch(10.0);
  CHECK(s.lr() == 1.0);
  s.end_epoch(10.0);
  CHECK(s.lr() == doctest::Approx(0.4));
  s.end_epoch(5.0);
  CHECK(s.lr() == doctest::Approx(0.4));
  for (int i = 0; i < 12; ++i) s.end_epoch(5.0);
  CHECK(s.lr() == doctest::Approx(0.1));
}

TEST_CASE("warmup is linear") {
  TrainConfig tc;
  tc.warmup_steps = 4;
  TrainState st = init_train_state(tiny_model(), tc, 3);
  CHECK(current_lr(st) == doctest::Approx(tc.lr / 4));
  st.step = 3;
  CHECK(current_lr(st) == doctest::Approx(tc.lr));
  st.step = 10;
  CHECK(current_lr(st) == doctest::Approx(tc.lr));
}

TEST_CASE("augment and block mask") {
  TrainConfig tc;
  const Tensor img = random_tensor({28, 28}, 4, false);
  const Tensor a = augment(img, tc, 5), b = augment(img, tc, 5);
  CHECK(a.shape() == img.shape());
  CHECK(std::memcmp(a.data().data(), b.data().data(), 8 * a.size()) == 0);
  CHECK(augment(random_tensor({1, 28, 28}, 4, false), tc, 5).shape() == Shape{1, 28, 28});
  CHECK_THROWS_AS(augment(Tensor::zeros({28, 27}), tc, 1), ShapeError);

  // Identity crop, no noise: the image comes back (possibly mirrored).
  TrainConfig still = tc;
  still.crop_scale_min = 1.0;
  still.noise_sigma = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const RowMatrix out = augment(img, still, seed).to_matrix();
    const RowMatrix in = img.to_matrix();
    const double direct = (out - in).cwiseAbs().maxCoeff();
    const double mirrored = (out - in.rowwise().reverse()).cwiseAbs().maxCoeff();
    CHECK(std::min(direct, mirrored) < 1e-12);
  }

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::vector<bool> m = block_mask(4, 0.3, seed);
    CHECK(m.size() == 16);
    CHECK(std::count(m.begin(), m.end(), true) == 5);
  }
  const std::vector<bool> one = block_mask(2, 0.01, 1);
  CHECK(std::count(one.begin(), one.end(), true) == 1);
  CHECK_THROWS_AS(block_mask(4, 0.0, 1), DomainError);
}

TEST_CASE("train_step bookkeeping") {
  TrainConfig tc;
  tc.batch_size = 4;
  TrainState st = init_train_state(tiny_model(), tc, 6);
  const auto images = tiny_images(4, 7);
  const LossTerms terms = compute_losses(st, images, 8);
  CHECK(std::abs(terms.total.item() - (terms.dino + terms.ibot + 0.5 * terms.koleo)) < 1e-12);
  CHECK(terms.teacher_class_logits.rows() == 8);
  CHECK(terms.teacher_patch_logits.rows() == 8 * 4);

  const StepMetrics m = train_step(st, images, 8);
  CHECK(m.step == 0);
  CHECK(st.step == 1);
  CHECK(std::abs(m.total - (m.dino + m.ibot + 0.5 * m.koleo)) < 1e-12);
  CHECK(m.total == terms.total.item());
  CHECK(std::isfinite(m.lr));
  for (const Tensor& p : trainable_parameters(st.student)) CHECK_FALSE(p.has_grad());
  CHECK(st.dino_center.to_matrix().norm() > 0.0);
  CHECK_THROWS_AS(train_step(st, std::span<const Tensor>(images.data(), 1), 9), DomainError);
}

TEST_CASE("zero loss weights leave parameters unchanged") {
  ViTConfig cfg = tiny_model(HeadKind::MLP);
  cfg.w_dino = cfg.w_ibot = cfg.w_koleo = 0.0;
  TrainState st = init_train_state(cfg, TrainConfig{}, 10);
  const auto before = snapshot(st.student);
  train_step(st, tiny_images(3, 11), 12);
  CHECK(snapshot(st.student) == before);
}

TEST_CASE("Gamma buffers survive training bit for bit") {
  TrainConfig tc;
  tc.batch_size = 4;
  tc.warmup_steps = 5;
  TrainState st = init_train_state(tiny_model(), tc, 13);
  std::vector<std::vector<double>> before;
  for (const NamedTensor& nt : named_tensors(st.student, "")) {
    if (nt.frozen) before.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
  }
  const auto images = tiny_images(8, 14);
  train_run(st, images, 100);
  std::size_t k = 0;
  for (const NamedTensor& nt : named_tensors(st.student, "")) {
    if (!nt.frozen) continue;
    CHECK(std::memcmp(before[k].data(), nt.tensor.data().data(), 8 * before[k].size()) == 0);
    ++k;
  }
  CHECK(k == before.size());
}

TEST_CASE("training is deterministic") {
  TrainConfig tc;
  tc.batch_size = 3;
  const auto images = tiny_images(6, 15);
  TrainState a = init_train_state(tiny_model(), tc, 16), b = init_train_state(tiny_model(), tc, 16);
  const auto ma = train_run(a, images, 5), mb = train_run(b, images, 5);
  for (std::size_t i = 0; i < ma.size(); ++i) {
    CHECK(ma[i].total == mb[i].total);
    CHECK(ma[i].lr == mb[i].lr);
  }
  CHECK(snapshot(a.teacher) == snapshot(b.teacher));

  const auto batch = sample_batch(a, 6);
  CHECK(batch.size() == 3);
  CHECK(std::set<std::size_t>(batch.begin(), batch.end()).size() == 3);
}

TEST_CASE("non-finite loss raises a training error with the step") {
  TrainConfig tc;
  TrainState st = init_train_state(tiny_model(), tc, 17);
  st.step = 42;
  // Two identical images with no augmentation noise give coincident class
  // tokens, which KoLeo cannot take the log of.
  st.train_cfg.noise_sigma = 0.0;
  st.train_cfg.crop_scale_min = 1.0;
  const Tensor img = tiny_images(1 + 1, 18)[0];
  const std::vector<Tensor> twins{img, img};
  bool raised = false;
  try {
    // Flip draws differ per view seed; search for a seed where both images
    // get the same flip in each view.
    for (std::uint64_t seed = 0; seed < 64 && !raised; ++seed) train_step(st, twins, seed);
  } catch (const TrainingError& e) {
    raised = true;
    CHECK(e.step() >= 42);
  }
  CHECK(raised);
}

TEST_CASE("KoLeo keeps class embeddings apart") {
  TrainConfig tc;
  tc.batch_size = 8;
  TrainState st = init_train_state(tiny_model(), tc, 19);
  const auto images = tiny_images(16, 20);
  train_run(st, images, 200);
  const RowMatrix emb = class_embeddings(st.student, st.model_cfg, images);
  double closest = INFINITY;
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < emb.rows(); ++j) closest = std::min(closest, (emb.row(i) - emb.row(j)).norm());
  }
  CHECK(closest > 1e-3);
}

TEST_CASE("one_nn_accuracy") {
  RowMatrix ref(4, 1), qry(2, 1);
  ref << 0, 1, 10, 11;
  qry << 0.4, 10.6;
  const std::vector<int> rl{0, 0, 1, 1};
  CHECK(one_nn_accuracy(ref, rl, qry, std::vector<int>{0, 1}) == 1.0);
  CHECK(one_nn_accuracy(ref, rl, qry, std::vector<int>{1, 1}) == 0.5);
  CHECK_THROWS_AS(one_nn_accuracy(ref, rl, qry, std::vector<int>{1}), ShapeError);
}

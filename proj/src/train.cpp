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

#include "rmlp/train.hpp"

#include <algorithm>
#include <cmath>

#include "rmlp/error.hpp"
#include "rmlp/rng.hpp"

namespace rmlp {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (KoLeo needs pairs)");
  if (!(lr > 0.0) || !(min_lr >= 0.0)) throw ConfigError("learning rates must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (steps_per_epoch == 0) throw ConfigError("steps_per_epoch must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ConfigError("plateau_factor must lie in (0, 1]");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= 1.0)) throw ConfigError("crop_scale_min must lie in (0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

Network build_network(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return Network{init_vit(cfg, derive_seed(seed, 0)), build_head(cfg.dino_head), build_head(cfg.ibot_head)};
}

Network copy_network(const Network& student, bool requires_grad) {
  return Network{copy_vit(student.backbone, requires_grad), student.dino_head.copy(requires_grad),
                 student.ibot_head.copy(requires_grad)};
}

namespace {

void append_head(std::vector<NamedTensor>& out, const Head& head, const std::string& prefix) {
  for (std::size_t i = 0; i < head.weights().size(); ++i) {
    out.push_back({prefix + "weight" + std::to_string(i), head.weights()[i], false});
  }
  for (std::size_t i = 0; i < head.randomized_layers().size(); ++i) {
    out.push_back({prefix + "gamma" + std::to_string(i), head.randomized_layers()[i].gamma, true});
  }
}

}  // namespace

std::vector<NamedTensor> named_tensors(const Network& net, const std::string& prefix) {
  std::vector<NamedTensor> out = named_tensors(net.backbone, prefix + "backbone.");
  append_head(out, net.dino_head, prefix + "dino_head.");
  append_head(out, net.ibot_head, prefix + "ibot_head.");
  return out;
}

std::vector<Tensor> trainable_parameters(const Network& net) {
  std::vector<Tensor> out;
  for (const NamedTensor& nt : named_tensors(net, "")) {
    if (!nt.frozen) out.push_back(nt.tensor);
  }
  return out;
}

void ema_update(Network& teacher, const Network& student, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw DomainError("ema_update: momentum must lie in [0, 1]");
  std::vector<Tensor> dst = trainable_parameters(teacher);
  const std::vector<Tensor> src = trainable_parameters(student);
  if (dst.size() != src.size()) throw ShapeError("ema_update: teacher and student differ in structure");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].shape() != src[k].shape()) throw ShapeError("ema_update: parameter shape mismatch");
    auto t = dst[k].mutable_data();
    const auto s = src[k].data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = momentum * t[i] + (1.0 - momentum) * s[i];
  }
}

AdamW::AdamW(std::span<const Tensor> params) {
  for (const Tensor& p : params) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(std::span<Tensor> params, double lr, double beta1, double beta2, double eps, double weight_decay) {
  if (params.size() != m_.size()) throw ShapeError("AdamW: parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].has_grad()) continue;
    const auto g = params[k].grad();
    auto w = params[k].mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      w[i] -= lr * (update + weight_decay * w[i]);
    }
  }
}

void PlateauScheduler::end_epoch(double mean_loss) {
  if (mean_loss < best_ - 1e-4 * std::abs(best_) || !std::isfinite(best_)) {
    best_ = mean_loss;
    bad_epochs_ = 0;
    return;
  }
  if (++bad_epochs_ > patience_) {
    lr_ = std::max(min_lr_, lr_ * factor_);
    bad_epochs_ = 0;
  }
}

TrainState init_train_state(const ViTConfig& model_cfg, const TrainConfig& train_cfg, std::uint64_t seed) {
  model_cfg.validate();
  train_cfg.validate();
  TrainState state;
  state.model_cfg = model_cfg;
  state.train_cfg = train_cfg;
  state.seed = seed;
  state.student = build_network(model_cfg, seed);
  state.teacher = copy_network(state.student, false);
  state.dino_center = Tensor::zeros({model_cfg.prototype_dim});
  state.ibot_center = Tensor::zeros({model_cfg.prototype_dim});
  const auto params = trainable_parameters(state.student);
  state.optimizer = AdamW(params);
  state.scheduler = PlateauScheduler(train_cfg.lr, train_cfg.min_lr, train_cfg.plateau_patience,
                                     train_cfg.plateau_factor);
  return state;
}

Tensor augment(const Tensor& image, const TrainConfig& cfg, std::uint64_t seed) {
  std::size_t channels = 1, size = 0;
  if (image.rank() == 2 && image.shape()[0] == image.shape()[1]) {
    size = image.shape()[0];
  } else if (image.rank() == 3 && image.shape()[1] == image.shape()[2]) {
    channels = image.shape()[0];
    size = image.shape()[1];
  } else {
    throw ShapeError("augment: expected a square [H x W] or [C x H x W] image");
  }
  Xoshiro256 rng(seed);
  const double s = static_cast<double>(size);
  const double scale = cfg.crop_scale_min + (1.0 - cfg.crop_scale_min) * rng.uniform();
  const double side = std::sqrt(scale) * s;
  const double top = (s - side) * rng.uniform();
  const double left = (s - side) * rng.uniform();
  const bool flip = rng.uniform() < 0.5;
  const double step = side / s;
  const auto src = image.data();
  auto pixel = [&](std::size_t c, long r, long q) {
    r = std::clamp<long>(r, 0, static_cast<long>(size) - 1);
    q = std::clamp<long>(q, 0, static_cast<long>(size) - 1);
    return src[(c * size + static_cast<std::size_t>(r)) * size + static_cast<std::size_t>(q)];
  };
  std::vector<double> out(image.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < size; ++i) {
      const double y = std::clamp(top + (static_cast<double>(i) + 0.5) * step - 0.5, 0.0, s - 1.0);
      const long y0 = static_cast<long>(std::floor(y));
      const double fy = y - static_cast<double>(y0);
      for (std::size_t j = 0; j < size; ++j) {
        const std::size_t jj = flip ? size - 1 - j : j;
        const double x = std::clamp(left + (static_cast<double>(jj) + 0.5) * step - 0.5, 0.0, s - 1.0);
        const long x0 = static_cast<long>(std::floor(x));
        const double fx = x - static_cast<double>(x0);
        const double top_row = (1.0 - fx) * pixel(c, y0, x0) + fx * pixel(c, y0, x0 + 1);
        const double bottom_row = (1.0 - fx) * pixel(c, y0 + 1, x0) + fx * pixel(c, y0 + 1, x0 + 1);
        out[(c * size + i) * size + j] = (1.0 - fy) * top_row + fy * bottom_row;
      }
    }
  }
  if (cfg.noise_sigma > 0.0) {
    for (double& v : out) v += cfg.noise_sigma * rng.gaussian();
  }
  return Tensor(image.shape(), std::move(out));
}

std::vector<bool> block_mask(std::size_t grid, double ratio, std::uint64_t seed) {
  if (grid == 0) throw DomainError("block_mask: empty grid");
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("block_mask: ratio must lie in (0, 1)");
  const std::size_t cells = grid * grid;
  const std::size_t target =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ratio * static_cast<double>(cells))), 1, cells);
  const std::size_t max_side = std::max<std::size_t>(1, grid / 2);
  Xoshiro256 rng(seed);
  std::vector<bool> mask(cells, false);
  std::size_t count = 0;
  while (count < target) {
    const std::size_t h = 1 + rng.below(max_side);
    const std::size_t w = 1 + rng.below(max_side);
    const std::size_t r0 = rng.below(grid - h + 1);
    const std::size_t c0 = rng.below(grid - w + 1);
    for (std::size_t r = r0; r < r0 + h && count < target; ++r) {
      for (std::size_t c = c0; c < c0 + w && count < target; ++c) {
        if (!mask[r * grid + c]) {
          mask[r * grid + c] = true;
          ++count;
        }
      }
    }
  }
  return mask;
}

namespace {

constexpr std::uint64_t kMaskStream = 0x6d61736bULL;

// Rows reordered so row i of the result pairs view v of image b with view
// 1 - v of the same image (rows are view-major: index v * B + b).
Tensor swap_views(const Tensor& rows, std::size_t batch) {
  std::vector<std::size_t> order(2 * batch);
  for (std::size_t b = 0; b < batch; ++b) {
    order[b] = batch + b;
    order[batch + b] = b;
  }
  return select_rows(rows, order);
}

}  // namespace

LossTerms compute_losses(const TrainState& state, std::span<const Tensor> images, std::uint64_t aug_seed) {
  const ViTConfig& cfg = state.model_cfg;
  const std::size_t batch = images.size();
  if (batch < 2) throw DomainError("compute_losses: batch must hold at least two images");
  const std::size_t patches = cfg.num_patches();

  std::vector<Tensor> s_cls, s_patch, t_cls, t_patch;
  std::vector<bool> mask_all;
  mask_all.reserve(2 * batch * patches);
  for (std::size_t v = 0; v < 2; ++v) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::uint64_t view_seed = derive_seed(aug_seed, 2 * b + v);
      const Tensor view = augment(images[b], state.train_cfg, view_seed);
      const std::vector<bool> mask = block_mask(cfg.grid(), cfg.mask_ratio, derive_seed(view_seed, kMaskStream));
      const Tensor student = vit_forward(state.student.backbone, view, cfg, mask);
      const Tensor teacher = vit_forward(state.teacher.backbone, view, cfg);
      s_cls.push_back(slice_rows(student, 0, 1));
      s_patch.push_back(slice_rows(student, 1, patches));
      t_cls.push_back(slice_rows(teacher, 0, 1));
      t_patch.push_back(slice_rows(teacher, 1, patches));
      mask_all.insert(mask_all.end(), mask.begin(), mask.end());
    }
  }
  const Tensor student_cls = concat_rows(s_cls);
  const Tensor teacher_dino = state.teacher.dino_head.forward(concat_rows(t_cls)).detach();
  const Tensor teacher_ibot = state.teacher.ibot_head.forward(concat_rows(t_patch)).detach();
  const Tensor student_dino = state.student.dino_head.forward(student_cls);
  const Tensor student_ibot = state.student.ibot_head.forward(concat_rows(s_patch));

  const Tensor dino = dino_loss(student_dino, swap_views(teacher_dino, batch), state.dino_center, cfg.student_temp,
                                cfg.teacher_temp);
  const Tensor ibot =
      ibot_loss(student_ibot, teacher_ibot, mask_all, state.ibot_center, cfg.student_temp, cfg.teacher_temp);
  const Tensor koleo = scale(add(koleo_loss(normalize_rows(slice_rows(student_cls, 0, batch))),
                                 koleo_loss(normalize_rows(slice_rows(student_cls, batch, batch)))),
                             0.5);

  LossTerms out;
  out.total = add(add(scale(dino, cfg.w_dino), scale(ibot, cfg.w_ibot)), scale(koleo, cfg.w_koleo));
  out.dino = dino.item();
  out.ibot = ibot.item();
  out.koleo = koleo.item();
  out.teacher_class_logits = teacher_dino.to_matrix();
  out.teacher_patch_logits = teacher_ibot.to_matrix();
  return out;
}

double current_lr(const TrainState& state) {
  const double lr = state.scheduler.lr();
  const std::size_t warmup = state.train_cfg.warmup_steps;
  if (state.step < warmup) return lr * static_cast<double>(state.step + 1) / static_cast<double>(warmup);
  return lr;
}

namespace {

void update_center(Tensor& center, const RowMatrix& logits, double momentum) {
  const Eigen::RowVectorXd batch_mean = logits.colwise().mean();
  auto c = center.mutable_data();
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = momentum * c[i] + (1.0 - momentum) * batch_mean(static_cast<Eigen::Index>(i));
  }
}

}  // namespace

StepMetrics train_step(TrainState& state, std::span<const Tensor> images, std::uint64_t aug_seed) {
  LossTerms terms;
  std::vector<Tensor> params = trainable_parameters(state.student);
  try {
    terms = compute_losses(state, images, aug_seed);
    grad(terms.total, params);
  } catch (const NumericError& e) {
    throw TrainingError(state.step, e.what());
  } catch (const DegenerateInputError& e) {
    throw TrainingError(state.step, e.what());
  }
  StepMetrics metrics{state.step, terms.total.item(), terms.dino, terms.ibot, terms.koleo, current_lr(state)};
  if (!std::isfinite(metrics.total)) throw TrainingError(state.step, "non-finite loss");

  const TrainConfig& tc = state.train_cfg;
  state.optimizer.step(params, metrics.lr, tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay);
  for (Tensor& p : params) p.clear_grad();
  update_center(state.dino_center, terms.teacher_class_logits, state.model_cfg.center_momentum);
  update_center(state.ibot_center, terms.teacher_patch_logits, state.model_cfg.center_momentum);
  ema_update(state.teacher, state.student, state.model_cfg.ema_momentum);

  state.epoch_loss_sum += metrics.total;
  if (++state.epoch_steps == tc.steps_per_epoch) {
    state.scheduler.end_epoch(state.epoch_loss_sum / static_cast<double>(state.epoch_steps));
    state.epoch_loss_sum = 0.0;
    state.epoch_steps = 0;
  }
  ++state.step;
  return metrics;
}

std::vector<std::size_t> sample_batch(const TrainState& state, std::size_t pool_size) {
  if (pool_size == 0) throw DomainError("sample_batch: empty image pool");
  Xoshiro256 rng(derive_seed(derive_seed(state.seed, 0x62617463ULL), state.step));
  std::vector<std::size_t> idx(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) idx[i] = i;
  const std::size_t b = std::min(pool_size, state.train_cfg.batch_size);
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.below(pool_size - i)]);
  idx.resize(b);
  return idx;
}

std::uint64_t augmentation_seed(const TrainState& state) {
  return derive_seed(derive_seed(state.seed, 0x61756767ULL), state.step);
}

std::vector<StepMetrics> train_run(TrainState& state, std::span<const Tensor> pool, std::size_t steps,
                                   const std::function<void(const StepMetrics&)>& on_step) {
  std::vector<StepMetrics> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<Tensor> batch;
    for (std::size_t i : sample_batch(state, pool.size())) batch.push_back(pool[i]);
    out.push_back(train_step(state, batch, augmentation_seed(state)));
    if (on_step) on_step(out.back());
  }
  return out;
}

RowMatrix class_embeddings(const Network& net, const ViTConfig& cfg, std::span<const Tensor> images) {
  RowMatrix out(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(cfg.embed_dim));
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = class_embedding(net, cfg, images[i]).transpose();
  }
  return out;
}

Eigen::VectorXd class_embedding(const Network& net, const ViTConfig& cfg, const Tensor& image) {
  const Tensor tokens = vit_forward(net.backbone, image, cfg);
  return tokens.matrix().row(0).transpose();
}

double one_nn_accuracy(const RowMatrix& reference, std::span<const int> reference_labels, const RowMatrix& query,
                       std::span<const int> query_labels) {
  if (reference.rows() == 0 || query.rows() == 0) throw DomainError("one_nn_accuracy: empty set");
  if (static_cast<std::size_t>(reference.rows()) != reference_labels.size() ||
      static_cast<std::size_t>(query.rows()) != query_labels.size()) {
    throw ShapeError("one_nn_accuracy: label count mismatch");
  }
  std::size_t correct = 0;
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    Eigen::Index best = 0;
    (reference.rowwise() - query.row(q)).rowwise().squaredNorm().minCoeff(&best);
    if (reference_labels[static_cast<std::size_t>(best)] == query_labels[static_cast<std::size_t>(q)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(query.rows());
}

}  // namespace rmlp

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

// Student-teacher self-distillation: augmentation, masking, the combined
// DINO + iBOT + KoLeo objective, AdamW with plateau learning-rate decay and
// the EMA teacher update.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rmlp/heads.hpp"
#include "rmlp/tensor.hpp"
#include "rmlp/vit.hpp"

namespace rmlp {

struct TrainConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double min_lr = 1e-8;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warmup_steps = 50;
  std::size_t steps_per_epoch = 50;
  std::size_t plateau_patience = 3;
  double plateau_factor = 0.4;
  double crop_scale_min = 0.6;
  double noise_sigma = 0.02;

  void validate() const;
};

// Backbone plus both projection heads.
struct Network {
  ViTModel backbone;
  Head dino_head;
  Head ibot_head;
};

Network build_network(const ViTConfig& cfg, std::uint64_t seed);
// Teacher copy: trainable tensors cloned without gradients, frozen randomized
// layers shared with `student`.
Network copy_network(const Network& student, bool requires_grad);
// All tensors, including frozen Gamma buffers (frozen = true).
std::vector<NamedTensor> named_tensors(const Network& net, const std::string& prefix);
// Trainable tensors only, same order as named_tensors minus the frozen ones.
std::vector<Tensor> trainable_parameters(const Network& net);

// teacher <- momentum * teacher + (1 - momentum) * student on every trainable
// tensor. Frozen randomized layers are left alone.
void ema_update(Network& teacher, const Network& student, double momentum);

class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(std::span<const Tensor> params);

  // Decoupled weight decay; parameters without a gradient buffer are skipped.
  void step(std::span<Tensor> params, double lr, double beta1, double beta2, double eps, double weight_decay);
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Multiplies the learning rate by `factor` after `patience` epochs without a
// relative improvement of 1e-4 in the epoch-mean loss.
class PlateauScheduler {
 public:
  PlateauScheduler() = default;
  PlateauScheduler(double lr, double min_lr, std::size_t patience, double factor)
      : lr_(lr), min_lr_(min_lr), patience_(patience), factor_(factor) {}

  double lr() const noexcept { return lr_; }
  void end_epoch(double mean_loss);

 private:
  double lr_ = 1e-3;
  double min_lr_ = 1e-8;
  std::size_t patience_ = 3;
  double factor_ = 0.4;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

struct TrainState {
  ViTConfig model_cfg;
  TrainConfig train_cfg;
  Network student;
  Network teacher;
  Tensor dino_center;  // [K], running mean of teacher class logits
  Tensor ibot_center;  // [K], running mean of teacher patch logits
  AdamW optimizer;
  PlateauScheduler scheduler;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  double epoch_loss_sum = 0.0;
  std::size_t epoch_steps = 0;
};

TrainState init_train_state(const ViTConfig& model_cfg, const TrainConfig& train_cfg, std::uint64_t seed);

// Random resized crop (area scale in [crop_scale_min, 1], square, bilinear),
// horizontal flip with probability 1/2 and additive N(0, noise_sigma^2)
// pixel noise. [H x W] or [C x H x W] in, same shape out.
Tensor augment(const Tensor& image, const TrainConfig& cfg, std::uint64_t seed);

// Block-random mask over the patch grid covering max(1, round(ratio * g^2))
// patches.
std::vector<bool> block_mask(std::size_t grid, double ratio, std::uint64_t seed);

struct LossTerms {
  Tensor total;  // weighted sum, on the tape
  double dino = 0.0;
  double ibot = 0.0;
  double koleo = 0.0;
  RowMatrix teacher_class_logits;  // [2B x K]
  RowMatrix teacher_patch_logits;  // [2B*patches x K]
};

// The full objective for one batch; deterministic given (state, images,
// aug_seed). Teacher outputs are constants.
LossTerms compute_losses(const TrainState& state, std::span<const Tensor> images, std::uint64_t aug_seed);

struct StepMetrics {
  std::size_t step = 0;
  double total = 0.0;
  double dino = 0.0;
  double ibot = 0.0;
  double koleo = 0.0;
  double lr = 0.0;
};

// One optimization step. Throws TrainingError (with the step index) on a
// non-finite loss or gradient.
StepMetrics train_step(TrainState& state, std::span<const Tensor> images, std::uint64_t aug_seed);

double current_lr(const TrainState& state);

// Batch for the next step: batch_size distinct indices into a pool of
// `pool_size` images (all of them if the pool is smaller), drawn from the
// state seed and step.
std::vector<std::size_t> sample_batch(const TrainState& state, std::size_t pool_size);
std::uint64_t augmentation_seed(const TrainState& state);

// `steps` calls to train_step over batches drawn from `pool`.
std::vector<StepMetrics> train_run(TrainState& state, std::span<const Tensor> pool, std::size_t steps,
                                   const std::function<void(const StepMetrics&)>& on_step = {});

// Class-token embeddings, one row per image.
RowMatrix class_embeddings(const Network& net, const ViTConfig& cfg, std::span<const Tensor> images);

// Final-norm class token of `net` for an un-augmented image.
Eigen::VectorXd class_embedding(const Network& net, const ViTConfig& cfg, const Tensor& image);

// Leave-nothing-out 1-NN: each query labelled by its nearest reference.
double one_nn_accuracy(const RowMatrix& reference, std::span<const int> reference_labels, const RowMatrix& query,
                       std::span<const int> query_labels);

}  // namespace rmlp

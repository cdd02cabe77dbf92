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

// A small pre-norm vision transformer and the self-distillation objectives
// used to train it. Each block is a residual map x -> x + s(x), where s
// combines multi-head self-attention and a GELU MLP, both behind layer norms.
// All linear maps are bias-free.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmlp/heads.hpp"
#include "rmlp/tensor.hpp"

namespace rmlp {

struct ViTConfig {
  std::size_t image_size = 56;
  std::size_t patch_size = 14;
  std::size_t channels = 1;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::size_t prototype_dim = 512;
  HeadSpec dino_head{{64, 256, 64, 512}, Activation::GELU, HeadKind::RMLP, 5.0, 0x0d1e0ULL};
  HeadSpec ibot_head{{64, 256, 64, 512}, Activation::GELU, HeadKind::RMLP, 5.0, 0x1b07ULL};
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double ema_momentum = 0.99;
  double center_momentum = 0.9;
  double mask_ratio = 0.3;
  double w_dino = 1.0;
  double w_ibot = 1.0;
  double w_koleo = 0.5;
  double layer_norm_eps = kLayerNormEps;

  void validate() const;  // ConfigError on violation
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t hidden_dim() const;
};

struct Block {
  Tensor norm1_gain, norm1_bias;
  Tensor query, key, value, attn_out;  // [d x d]
  Tensor norm2_gain, norm2_bias;
  Tensor fc1;  // [d x hidden]
  Tensor fc2;  // [hidden x d]
};

struct ViTModel {
  Tensor patch_projection;      // [patch_dim x d]
  Tensor positional_embedding;  // [(patches + 1) x d]
  Tensor class_token;           // [d]
  Tensor mask_token;            // [d]
  std::vector<Block> blocks;
  Tensor final_gain, final_bias;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

ViTModel init_vit(const ViTConfig& cfg, std::uint64_t seed, bool requires_grad = true);
ViTModel copy_vit(const ViTModel& model, bool requires_grad);
// Every tensor of the model in a stable order, prefixed by `prefix`.
std::vector<NamedTensor> named_tensors(const ViTModel& model, const std::string& prefix);

// [C x H x W] (or [H x W] for one channel) -> [patches x C*p*p], patches
// row-major over the grid, each flattened channel-major then row-major.
Tensor patchify(const Tensor& image, const ViTConfig& cfg);

// Patch embedding, optional mask-token substitution, class token prepended,
// positional embeddings added. `mask` (length = patches) may be empty.
Tensor tokenize(const ViTModel& model, const Tensor& image, const ViTConfig& cfg,
                const std::vector<bool>& mask = {});

// Row-stochastic attention matrices recorded by block_forward, one per head.
struct AttentionTrace {
  std::vector<RowMatrix> heads;
};

Tensor block_forward(const Block& block, const Tensor& x, std::size_t heads, double eps = kLayerNormEps,
                     AttentionTrace* trace = nullptr);

// Tokens after all blocks and the final norm: [(patches + 1) x d], class
// token first.
Tensor vit_forward(const ViTModel& model, const Tensor& image, const ViTConfig& cfg,
                   const std::vector<bool>& mask = {});

// -(1/n) sum_i log min_{j != i} |x_i - x_j|. Throws DegenerateInputError when
// two rows coincide (distance below 1e-12).
Tensor koleo_loss(const Tensor& vectors);

// Cross-entropy between softmax((teacher - center) / teacher_temp) and
// log_softmax(student / student_temp), averaged over rows. Teacher logits
// and center are treated as constants. Accepts [K] or [r x K].
Tensor dino_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& center,
                 double student_temp, double teacher_temp);

// Same cross-entropy restricted to masked patch rows, averaged over them.
Tensor ibot_loss(const Tensor& student_patch_logits, const Tensor& teacher_patch_logits,
                 const std::vector<bool>& mask, const Tensor& center, double student_temp, double teacher_temp);

}  // namespace rmlp

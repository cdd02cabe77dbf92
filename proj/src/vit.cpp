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

#include "rmlp/vit.hpp"

#include <cmath>
#include <limits>

#include "rmlp/error.hpp"
#include "rmlp/rng.hpp"

namespace rmlp {

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0) throw ConfigError("image and patch sizes must be positive");
  if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
  if (channels == 0 || embed_dim == 0 || depth == 0 || heads == 0) throw ConfigError("model sizes must be positive");
  if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (prototype_dim == 0) throw ConfigError("prototype_dim must be positive");
  for (const HeadSpec* head : {&dino_head, &ibot_head}) {
    head->validate();
    if (head->dims.front() != embed_dim) throw ConfigError("head input dim must equal embed_dim");
    if (head->dims.back() != prototype_dim) throw ConfigError("head output dim must equal prototype_dim");
  }
  if (!(student_temp > 0.0) || !(teacher_temp > 0.0)) throw ConfigError("temperatures must be positive");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("ema_momentum must lie in [0, 1]");
  if (!(center_momentum >= 0.0 && center_momentum <= 1.0)) throw ConfigError("center_momentum must lie in [0, 1]");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  if (!(w_dino >= 0.0 && w_ibot >= 0.0 && w_koleo >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
}

std::size_t ViTConfig::hidden_dim() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(embed_dim))));
}

namespace {

class Initializer {
 public:
  Initializer(std::uint64_t seed, bool requires_grad) : seed_(seed), requires_grad_(requires_grad) {}

  Tensor xavier(std::size_t in, std::size_t out) {
    Xoshiro256 rng(next_seed());
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (double& v : w) v = bound * (2.0 * rng.uniform() - 1.0);
    return Tensor({in, out}, std::move(w), requires_grad_);
  }

  Tensor normal(Shape shape, double sd) {
    Xoshiro256 rng(next_seed());
    std::vector<double> w(shape_size(shape));
    for (double& v : w) v = sd * rng.gaussian();
    return Tensor(std::move(shape), std::move(w), requires_grad_);
  }

  Tensor constant(std::size_t n, double value) {
    return Tensor({n}, std::vector<double>(n, value), requires_grad_);
  }

 private:
  std::uint64_t next_seed() { return derive_seed(seed_, counter_++); }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool requires_grad_;
};

Tensor as_rows(const Tensor& t) { return t.rank() == 1 ? reshape(t, {1, t.size()}) : t; }

}  // namespace

ViTModel init_vit(const ViTConfig& cfg, std::uint64_t seed, bool requires_grad) {
  cfg.validate();
  Initializer init(seed, requires_grad);
  const std::size_t d = cfg.embed_dim, hidden = cfg.hidden_dim();
  ViTModel model;
  model.patch_projection = init.xavier(cfg.patch_dim(), d);
  model.positional_embedding = init.normal({cfg.num_patches() + 1, d}, 0.02);
  model.class_token = init.normal({d}, 0.02);
  model.mask_token = init.normal({d}, 0.02);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    Block b;
    b.norm1_gain = init.constant(d, 1.0);
    b.norm1_bias = init.constant(d, 0.0);
    b.query = init.xavier(d, d);
    b.key = init.xavier(d, d);
    b.value = init.xavier(d, d);
    b.attn_out = init.xavier(d, d);
    b.norm2_gain = init.constant(d, 1.0);
    b.norm2_bias = init.constant(d, 0.0);
    b.fc1 = init.xavier(d, hidden);
    b.fc2 = init.xavier(hidden, d);
    model.blocks.push_back(std::move(b));
  }
  model.final_gain = init.constant(d, 1.0);
  model.final_bias = init.constant(d, 0.0);
  return model;
}

std::vector<NamedTensor> named_tensors(const ViTModel& model, const std::string& prefix) {
  std::vector<NamedTensor> out{{prefix + "patch_projection", model.patch_projection},
                               {prefix + "positional_embedding", model.positional_embedding},
                               {prefix + "class_token", model.class_token},
                               {prefix + "mask_token", model.mask_token}};
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block& b = model.blocks[l];
    const std::string p = prefix + "block" + std::to_string(l) + ".";
    for (const auto& [name, t] : {std::pair{"norm1_gain", b.norm1_gain}, std::pair{"norm1_bias", b.norm1_bias},
                                  std::pair{"query", b.query}, std::pair{"key", b.key}, std::pair{"value", b.value},
                                  std::pair{"attn_out", b.attn_out}, std::pair{"norm2_gain", b.norm2_gain},
                                  std::pair{"norm2_bias", b.norm2_bias}, std::pair{"fc1", b.fc1},
                                  std::pair{"fc2", b.fc2}}) {
      out.push_back({p + name, t});
    }
  }
  out.push_back({prefix + "final_gain", model.final_gain});
  out.push_back({prefix + "final_bias", model.final_bias});
  return out;
}

ViTModel copy_vit(const ViTModel& model, bool requires_grad) {
  auto c = [requires_grad](const Tensor& t) { return t.clone(requires_grad); };
  ViTModel out;
  out.patch_projection = c(model.patch_projection);
  out.positional_embedding = c(model.positional_embedding);
  out.class_token = c(model.class_token);
  out.mask_token = c(model.mask_token);
  for (const Block& b : model.blocks) {
    out.blocks.push_back(Block{c(b.norm1_gain), c(b.norm1_bias), c(b.query), c(b.key), c(b.value), c(b.attn_out),
                               c(b.norm2_gain), c(b.norm2_bias), c(b.fc1), c(b.fc2)});
  }
  out.final_gain = c(model.final_gain);
  out.final_bias = c(model.final_bias);
  return out;
}

Tensor patchify(const Tensor& image, const ViTConfig& cfg) {
  std::size_t channels = 1, height = 0, width = 0;
  if (image.rank() == 2) {
    height = image.shape()[0];
    width = image.shape()[1];
  } else if (image.rank() == 3) {
    channels = image.shape()[0];
    height = image.shape()[1];
    width = image.shape()[2];
  } else {
    throw ShapeError("patchify: expected [H x W] or [C x H x W], got " + shape_string(image.shape()));
  }
  if (channels != cfg.channels) throw ShapeError("patchify: channel count does not match the model");
  if (height != cfg.image_size || width != cfg.image_size) {
    throw ShapeError("patchify: image is " + std::to_string(height) + "x" + std::to_string(width) + ", model expects " +
                     std::to_string(cfg.image_size));
  }
  if (height % cfg.patch_size != 0) throw ShapeError("patchify: image size not divisible by patch size");
  const std::size_t p = cfg.patch_size, g = height / p;
  const auto px = image.data();
  std::vector<double> out(g * g * channels * p * p);
  std::size_t k = 0;
  for (std::size_t gr = 0; gr < g; ++gr) {
    for (std::size_t gc = 0; gc < g; ++gc) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t r = 0; r < p; ++r) {
          for (std::size_t s = 0; s < p; ++s) {
            out[k++] = px[(c * height + gr * p + r) * width + gc * p + s];
          }
        }
      }
    }
  }
  return Tensor({g * g, channels * p * p}, std::move(out));
}

Tensor tokenize(const ViTModel& model, const Tensor& image, const ViTConfig& cfg, const std::vector<bool>& mask) {
  Tensor patches = matmul(patchify(image, cfg), model.patch_projection);
  if (!mask.empty()) patches = replace_rows(patches, mask, model.mask_token);
  const Tensor cls = reshape(model.class_token, {1, cfg.embed_dim});
  const Tensor parts[] = {cls, patches};
  return add(concat_rows(parts), model.positional_embedding);
}

Tensor block_forward(const Block& block, const Tensor& x, std::size_t heads, double eps, AttentionTrace* trace) {
  if (x.rank() != 2 || x.cols() != block.query.rows()) throw ShapeError("block_forward: token width mismatch");
  const std::size_t d = x.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("block_forward: embed dim not divisible by heads");
  const std::size_t head_dim = d / heads;
  // softmax(q k^T / r) with r = sqrt(d / heads), expressed as a temperature.
  const double r = std::sqrt(static_cast<double>(head_dim));

  const Tensor h = layer_norm(x, block.norm1_gain, block.norm1_bias, eps);
  const Tensor q = matmul(h, block.query);
  const Tensor k = matmul(h, block.key);
  const Tensor v = matmul(h, block.value);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  if (trace) trace->heads.clear();
  for (std::size_t i = 0; i < heads; ++i) {
    const std::size_t off = i * head_dim;
    const Tensor qh = slice_cols(q, off, head_dim);
    const Tensor kh = slice_cols(k, off, head_dim);
    const Tensor vh = slice_cols(v, off, head_dim);
    const Tensor attn = softmax_rows(matmul(qh, transpose(kh)), r);
    if (trace) trace->heads.push_back(attn.to_matrix());
    outs.push_back(matmul(attn, vh));
  }
  const Tensor y = add(x, matmul(heads == 1 ? outs[0] : concat_cols(outs), block.attn_out));
  const Tensor z = layer_norm(y, block.norm2_gain, block.norm2_bias, eps);
  return add(y, matmul(gelu(matmul(z, block.fc1)), block.fc2));
}

Tensor vit_forward(const ViTModel& model, const Tensor& image, const ViTConfig& cfg, const std::vector<bool>& mask) {
  Tensor x = tokenize(model, image, cfg, mask);
  for (const Block& b : model.blocks) x = block_forward(b, x, cfg.heads, cfg.layer_norm_eps);
  return layer_norm(x, model.final_gain, model.final_bias, cfg.layer_norm_eps);
}

Tensor koleo_loss(const Tensor& vectors) {
  const Tensor x = as_rows(vectors.rank() == 1 ? reshape(vectors, {vectors.size(), 1}) : vectors);
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw DomainError("koleo_loss: need at least two vectors");
  const auto X = x.matrix();
  std::vector<std::size_t> nearest(n);
  std::vector<double> dist(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = (X.row(static_cast<Eigen::Index>(i)) - X.row(static_cast<Eigen::Index>(j))).norm();
      if (dij < best) {
        best = dij;
        nearest[i] = j;
      }
    }
    if (!(best >= 1e-12)) {
      throw DegenerateInputError("koleo_loss: vectors " + std::to_string(i) + " and " + std::to_string(nearest[i]) +
                                 " coincide; the loss diverges");
    }
    dist[i] = best;
    total += std::log(best);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return make_op("koleo_loss", {}, {-total * inv_n}, {x},
                 [x, nearest, dist, n, d, inv_n](auto, std::span<const double> g,
                                                 std::span<std::vector<double>* const> pg) {
                   const auto v = x.data();
                   auto& dx = *pg[0];
                   for (std::size_t i = 0; i < n; ++i) {
                     const std::size_t j = nearest[i];
                     const double c = g[0] * inv_n / (dist[i] * dist[i]);
                     for (std::size_t k = 0; k < d; ++k) {
                       const double diff = v[i * d + k] - v[j * d + k];
                       dx[i * d + k] -= c * diff;
                       dx[j * d + k] += c * diff;
                     }
                   }
                 });
}

namespace {

// softmax((teacher - center) / temp) as a constant tensor.
Tensor teacher_distribution(const Tensor& teacher, const Tensor& center, double temp) {
  const Tensor t = as_rows(teacher.detach());
  if (center.size() != t.cols()) throw ShapeError("teacher center length must equal prototype count");
  return softmax_rows(add_row(t, center.detach()), temp).detach();
}

}  // namespace

Tensor dino_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& center,
                 double student_temp, double teacher_temp) {
  if (!(student_temp > 0.0) || !(teacher_temp > 0.0)) throw DomainError("dino_loss: temperatures must be positive");
  const Tensor s = as_rows(student_logits);
  if (s.shape() != as_rows(teacher_logits.detach()).shape()) throw ShapeError("dino_loss: logit shapes differ");
  const Tensor neg_center = scale(center.detach(), -1.0).detach();
  const Tensor p = teacher_distribution(teacher_logits, neg_center, teacher_temp);
  const Tensor ce = sum(mul(p, log_softmax_rows(s, student_temp)));
  return scale(ce, -1.0 / static_cast<double>(s.rows()));
}

Tensor ibot_loss(const Tensor& student_patch_logits, const Tensor& teacher_patch_logits, const std::vector<bool>& mask,
                 const Tensor& center, double student_temp, double teacher_temp) {
  if (student_patch_logits.rank() != 2 || student_patch_logits.shape() != teacher_patch_logits.shape()) {
    throw ShapeError("ibot_loss: patch logits must be matching [patches x K] matrices");
  }
  if (mask.size() != student_patch_logits.rows()) throw ShapeError("ibot_loss: mask length must equal patch count");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(i);
  }
  if (rows.empty()) throw DomainError("ibot_loss: mask selects no patch");
  return dino_loss(select_rows(student_patch_logits, rows), select_rows(teacher_patch_logits.detach(), rows), center,
                   student_temp, teacher_temp);
}

}  // namespace rmlp

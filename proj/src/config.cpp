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

#include "rmlp/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "rmlp/error.hpp"

namespace rmlp {

namespace {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read through the size_t overload");

using nlohmann::json;
using nlohmann::ordered_json;

class Reader {
 public:
  Reader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const char* key) const { return doc_.contains(key); }

  void get(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + ": expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(where(key) + ": not finite");
    }
  }
  void get(const char* key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      double d = 0.0;
      get(key, d);
      out = d;
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + ": expected an array");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number_unsigned()) throw ConfigError(where(key) + ": expected non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }

  const json* child(const char* key) { return find(key); }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    return key ? p + "." + key : p;
  }

  // Unknown keys are fatal.
  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + where(item.key().c_str()));
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

}  // namespace

HeadSpec parse_head_spec(const json& doc, const std::string& path, const HeadSpec& defaults) {
  HeadSpec spec = defaults;
  Reader r(doc, path);
  r.get("dims", spec.dims);
  std::string kind = to_string(spec.kind);
  r.get("kind", kind);
  try {
    spec.kind = parse_head_kind(kind);
  } catch (const Error& e) {
    throw ConfigError(r.where("kind") + ": " + e.what());
  }
  std::string act = "gelu";
  r.get("activation", act);
  if (act != "gelu") throw ConfigError(r.where("activation") + ": only \"gelu\" is supported");
  r.get("amplitude", spec.amplitude);
  if (spec.kind == HeadKind::MLP && !r.has("amplitude")) spec.amplitude.reset();
  r.get("seed", spec.seed);
  r.finish();
  return spec;
}

ViTConfig parse_vit_config(const json& doc, const std::string& path) {
  ViTConfig cfg;
  Reader r(doc, path);
  r.get("image_size", cfg.image_size);
  r.get("patch_size", cfg.patch_size);
  r.get("channels", cfg.channels);
  r.get("embed_dim", cfg.embed_dim);
  r.get("depth", cfg.depth);
  r.get("heads", cfg.heads);
  r.get("mlp_ratio", cfg.mlp_ratio);
  r.get("prototype_dim", cfg.prototype_dim);
  if (const json* h = r.child("dino_head")) cfg.dino_head = parse_head_spec(*h, join(path, "dino_head"), cfg.dino_head);
  if (const json* h = r.child("ibot_head")) cfg.ibot_head = parse_head_spec(*h, join(path, "ibot_head"), cfg.ibot_head);
  r.get("student_temp", cfg.student_temp);
  r.get("teacher_temp", cfg.teacher_temp);
  r.get("ema_momentum", cfg.ema_momentum);
  r.get("center_momentum", cfg.center_momentum);
  r.get("mask_ratio", cfg.mask_ratio);
  r.get("w_dino", cfg.w_dino);
  r.get("w_ibot", cfg.w_ibot);
  r.get("w_koleo", cfg.w_koleo);
  r.get("layer_norm_eps", cfg.layer_norm_eps);
  r.finish();
  return cfg;
}

TrainConfig parse_train_config(const json& doc, const std::string& path) {
  TrainConfig cfg;
  Reader r(doc, path);
  r.get("steps", cfg.steps);
  r.get("batch_size", cfg.batch_size);
  r.get("lr", cfg.lr);
  r.get("min_lr", cfg.min_lr);
  r.get("weight_decay", cfg.weight_decay);
  r.get("beta1", cfg.beta1);
  r.get("beta2", cfg.beta2);
  r.get("adam_eps", cfg.adam_eps);
  r.get("warmup_steps", cfg.warmup_steps);
  r.get("steps_per_epoch", cfg.steps_per_epoch);
  r.get("plateau_patience", cfg.plateau_patience);
  r.get("plateau_factor", cfg.plateau_factor);
  r.get("crop_scale_min", cfg.crop_scale_min);
  r.get("noise_sigma", cfg.noise_sigma);
  r.finish();
  return cfg;
}

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg;
  Reader r(doc, "");
  r.get("seed", cfg.seed);
  if (const json* d = r.child("distortion")) {
    Reader s(*d, "distortion");
    s.get("points", cfg.distortion.points);
    s.get("dim", cfg.distortion.dim);
    s.get("out_dim", cfg.distortion.out_dim);
    s.get("epsilon", cfg.distortion.epsilon);
    s.get("lambda", cfg.distortion.lambda);
    s.get("lambda_fraction", cfg.distortion.lambda_fraction);
    s.get("trials", cfg.distortion.trials);
    s.finish();
  }
  if (const json* d = r.child("circle")) {
    Reader s(*d, "circle");
    s.get("points", cfg.circle.points);
    s.get("lambda", cfg.circle.lambda);
    s.finish();
  }
  if (const json* d = r.child("model")) cfg.model = parse_vit_config(*d, "model");
  if (const json* d = r.child("train")) cfg.train = parse_train_config(*d, "train");
  if (const json* d = r.child("dataset")) {
    Reader s(*d, "dataset");
    s.get("count", cfg.dataset.count);
    s.get("image_size", cfg.dataset.image_size);
    s.get("patch_size", cfg.dataset.patch_size);
    s.get("classes", cfg.dataset.classes);
    s.get("noise_sigma", cfg.dataset.noise_sigma);
    s.finish();
  }
  if (const json* d = r.child("analysis")) {
    Reader s(*d, "analysis");
    s.get("network", cfg.analysis.network);
    s.get("smoothing_sigma", cfg.analysis.smoothing_sigma);
    s.get("em_iters", cfg.analysis.em_iters);
    s.get("bins", cfg.analysis.bins);
    s.finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  const auto& d = distortion;
  if (d.points < 3) throw ConfigError("distortion.points must be >= 3");
  if (d.dim == 0 || d.out_dim == 0) throw ConfigError("distortion.dim and out_dim must be positive");
  if (!(d.epsilon > 0.0 && d.epsilon < 1.0)) throw ConfigError("distortion.epsilon must lie in (0, 1)");
  if (d.lambda && *d.lambda < 0.0) throw ConfigError("distortion.lambda must be >= 0");
  if (d.lambda_fraction < 0.0) throw ConfigError("distortion.lambda_fraction must be >= 0");
  if (d.trials == 0) throw ConfigError("distortion.trials must be positive");
  if (circle.points < 3) throw ConfigError("circle.points must be >= 3");
  if (circle.lambda < 0.0) throw ConfigError("circle.lambda must be >= 0");
  model.validate();
  train.validate();
  dataset.validate();
  if (dataset.image_size != model.image_size || dataset.patch_size != model.patch_size) {
    throw ConfigError("dataset image_size/patch_size must match the model");
  }
  if (analysis.network != "teacher" && analysis.network != "student") {
    throw ConfigError("analysis.network must be \"teacher\" or \"student\"");
  }
  if (analysis.smoothing_sigma && !(*analysis.smoothing_sigma > 0.0)) {
    throw ConfigError("analysis.smoothing_sigma must be positive");
  }
  if (analysis.em_iters == 0 || analysis.bins == 0) throw ConfigError("analysis.em_iters and bins must be positive");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

ordered_json to_json(const HeadSpec& spec) {
  ordered_json j = {{"dims", spec.dims}, {"kind", to_string(spec.kind)}, {"activation", "gelu"}};
  j["amplitude"] = spec.amplitude ? ordered_json(*spec.amplitude) : ordered_json(nullptr);
  j["seed"] = spec.seed;
  return j;
}

ordered_json to_json(const ViTConfig& c) {
  return {{"image_size", c.image_size},
          {"patch_size", c.patch_size},
          {"channels", c.channels},
          {"embed_dim", c.embed_dim},
          {"depth", c.depth},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"prototype_dim", c.prototype_dim},
          {"dino_head", to_json(c.dino_head)},
          {"ibot_head", to_json(c.ibot_head)},
          {"student_temp", c.student_temp},
          {"teacher_temp", c.teacher_temp},
          {"ema_momentum", c.ema_momentum},
          {"center_momentum", c.center_momentum},
          {"mask_ratio", c.mask_ratio},
          {"w_dino", c.w_dino},
          {"w_ibot", c.w_ibot},
          {"w_koleo", c.w_koleo},
          {"layer_norm_eps", c.layer_norm_eps}};
}

ordered_json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"min_lr", c.min_lr},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"warmup_steps", c.warmup_steps},
          {"steps_per_epoch", c.steps_per_epoch},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"crop_scale_min", c.crop_scale_min},
          {"noise_sigma", c.noise_sigma}};
}

ordered_json to_json(const RunConfig& c) {
  ordered_json distortion = {{"points", c.distortion.points},
                             {"dim", c.distortion.dim},
                             {"out_dim", c.distortion.out_dim},
                             {"epsilon", c.distortion.epsilon}};
  distortion["lambda"] = c.distortion.lambda ? ordered_json(*c.distortion.lambda) : ordered_json(nullptr);
  distortion["lambda_fraction"] = c.distortion.lambda_fraction;
  distortion["trials"] = c.distortion.trials;
  ordered_json analysis = {{"network", c.analysis.network}};
  analysis["smoothing_sigma"] =
      c.analysis.smoothing_sigma ? ordered_json(*c.analysis.smoothing_sigma) : ordered_json(nullptr);
  analysis["em_iters"] = c.analysis.em_iters;
  analysis["bins"] = c.analysis.bins;
  return {{"seed", c.seed},
          {"distortion", distortion},
          {"circle", {{"points", c.circle.points}, {"lambda", c.circle.lambda}}},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"dataset",
           {{"count", c.dataset.count},
            {"image_size", c.dataset.image_size},
            {"patch_size", c.dataset.patch_size},
            {"classes", c.dataset.classes},
            {"noise_sigma", c.dataset.noise_sigma}}},
          {"analysis", analysis}};
}

}  // namespace rmlp

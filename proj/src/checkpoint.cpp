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

#include "rmlp/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "rmlp/config.hpp"
#include "rmlp/error.hpp"
#include "rmlp/io.hpp"

namespace rmlp {

namespace {

constexpr const char* kFormat = "rmlp-checkpoint";
constexpr int kVersion = 1;

std::vector<NamedTensor> checkpoint_tensors(const Network& student, const Network& teacher, const Tensor& dino_center,
                                            const Tensor& ibot_center) {
  std::vector<NamedTensor> all = named_tensors(student, "student.");
  for (NamedTensor& nt : named_tensors(teacher, "teacher.")) all.push_back(std::move(nt));
  all.push_back({"dino_center", dino_center, false});
  all.push_back({"ibot_center", ibot_center, false});
  return all;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state) {
  std::filesystem::create_directories(dir / "tensors");
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const NamedTensor& nt :
       checkpoint_tensors(state.student, state.teacher, state.dino_center, state.ibot_center)) {
    const std::string file = "tensors/" + nt.name + ".rmtf";
    rmtf_write(dir / file, nt.tensor);
    tensors.push_back({{"name", nt.name}, {"file", file}, {"shape", nt.tensor.shape()}, {"frozen", nt.frozen}});
  }
  const nlohmann::ordered_json manifest = {{"format", kFormat},
                                           {"version", kVersion},
                                           {"step", state.step},
                                           {"seed", state.seed},
                                           {"model", to_json(state.model_cfg)},
                                           {"train", to_json(state.train_cfg)},
                                           {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("checkpoint: missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  Checkpoint ck;
  std::vector<std::pair<std::string, std::string>> files;
  try {
    if (manifest.at("format") != kFormat) throw FormatError("checkpoint: unknown format");
    if (manifest.at("version") != kVersion) throw FormatError("checkpoint: unsupported version");
    ck.step = manifest.at("step").get<std::size_t>();
    ck.seed = manifest.at("seed").get<std::uint64_t>();
    ck.model_cfg = parse_vit_config(manifest.at("model"), "model");
    ck.train_cfg = parse_train_config(manifest.at("train"), "train");
    for (const auto& t : manifest.at("tensors")) {
      files.emplace_back(t.at("name").get<std::string>(), t.at("file").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  ck.model_cfg.validate();

  // Rebuild the architecture, then overwrite every tensor in place. The
  // teacher shares its randomized layers with the student, as in training.
  ck.student = build_network(ck.model_cfg, ck.seed);
  ck.teacher = copy_network(ck.student, false);
  ck.dino_center = Tensor::zeros({ck.model_cfg.prototype_dim});
  ck.ibot_center = Tensor::zeros({ck.model_cfg.prototype_dim});
  std::vector<NamedTensor> slots = checkpoint_tensors(ck.student, ck.teacher, ck.dino_center, ck.ibot_center);
  if (slots.size() != files.size()) throw FormatError("checkpoint: tensor count does not match the architecture");
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (slots[k].name != files[k].first) {
      throw FormatError("checkpoint: expected tensor " + slots[k].name + ", found " + files[k].first);
    }
    const Tensor loaded = rmtf_read(dir / files[k].second);
    if (loaded.shape() != slots[k].tensor.shape()) {
      throw FormatError("checkpoint: shape mismatch for " + slots[k].name);
    }
    const auto src = loaded.data();
    std::copy(src.begin(), src.end(), slots[k].tensor.mutable_data().begin());
  }
  return ck;
}

}  // namespace rmlp

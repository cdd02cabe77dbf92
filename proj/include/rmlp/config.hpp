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

// JSON run configuration. Unknown keys are rejected at every level.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "rmlp/heads.hpp"
#include "rmlp/io.hpp"
#include "rmlp/train.hpp"
#include "rmlp/vit.hpp"

namespace rmlp {

struct DistortionConfig {
  std::size_t points = 100;
  std::size_t dim = 64;
  std::size_t out_dim = 256;
  double epsilon = 0.5;
  std::optional<double> lambda;   // absolute amplitude; wins over lambda_fraction
  double lambda_fraction = 0.9;   // fraction of the amplitude bound
  std::size_t trials = 100;
};

struct CircleConfig {
  std::size_t points = 256;
  double lambda = 0.2;
};

struct AnalysisConfig {
  std::string network = "teacher";        // teacher | student
  std::optional<double> smoothing_sigma;  // default patch_size / 4
  std::size_t em_iters = 100;
  std::size_t bins = 32;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DistortionConfig distortion;
  CircleConfig circle;
  ViTConfig model;
  TrainConfig train;
  SyntheticSpec dataset;  // dataset.seed is derived from `seed`, not read
  AnalysisConfig analysis;

  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const HeadSpec& spec);
nlohmann::ordered_json to_json(const ViTConfig& cfg);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
nlohmann::ordered_json to_json(const RunConfig& cfg);

// Keys absent from `doc` keep their value from `defaults`.
HeadSpec parse_head_spec(const nlohmann::json& doc, const std::string& path, const HeadSpec& defaults = {});
ViTConfig parse_vit_config(const nlohmann::json& doc, const std::string& path);
TrainConfig parse_train_config(const nlohmann::json& doc, const std::string& path);

}  // namespace rmlp

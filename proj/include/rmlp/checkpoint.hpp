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

// Checkpoint directory: manifest.json plus one RMTF file per tensor under
// tensors/. Frozen Gamma buffers are stored like any other tensor.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "rmlp/train.hpp"

namespace rmlp {

struct Checkpoint {
  ViTConfig model_cfg;
  TrainConfig train_cfg;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  Network student;
  Network teacher;
  Tensor dino_center;
  Tensor ibot_center;
};

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state);
// Throws FormatError when the manifest or any tensor disagrees with the
// architecture it describes.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace rmlp

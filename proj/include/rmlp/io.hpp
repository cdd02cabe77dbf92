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

// File formats and the synthetic dataset.
//
// RMTF tensor container (all integers little-endian):
//   bytes 0..3   magic "RMTF"
//   u32          version (1)
//   u8           dtype code (0 = f64)
//   u8           ndim
//   u64 x ndim   shape
//   f64 x N      row-major payload, N = product(shape) (1 for ndim = 0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rmlp/tensor.hpp"

namespace rmlp {

inline constexpr std::uint32_t kRmtfVersion = 1;
inline constexpr std::uint8_t kRmtfDtypeF64 = 0;

std::vector<std::uint8_t> rmtf_encode(const Tensor& tensor);
// Throws FormatError naming the failing field (magic, version, dtype, ndim,
// shape, payload length).
Tensor rmtf_decode(std::span<const std::uint8_t> bytes);

void rmtf_write(const std::filesystem::path& path, const Tensor& tensor);
Tensor rmtf_read(const std::filesystem::path& path);

// Binary "P5" greymap with maxval 255, scaled to [0, 1]. [H x W].
Tensor load_pgm(const std::filesystem::path& path);
// Values clamped to [0, 1] and rounded to 8 bits.
void write_pgm(const std::filesystem::path& path, const RowMatrix& image);

struct SyntheticSpec {
  std::size_t count = 64;
  std::size_t image_size = 56;
  std::size_t patch_size = 14;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  double noise_sigma = 0.02;

  void validate() const;
};

// Each image: flat background at 0.5 plus a horizontal band of whole patch
// rows carrying an oriented sinusoid whose period and orientation depend on
// the class, plus Gaussian noise. Image i has label i % classes.
struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<Tensor> images;     // [S x S]
  std::vector<int> labels;
  std::vector<BoolGrid> masks;    // [g x g], true inside the textured band
};

SyntheticDataset gen_synthetic(const SyntheticSpec& spec);

// images.rmtf [count x S x S], labels.rmtf [count], masks.rmtf [count x g x g],
// dataset.json with the generator settings, and 8-bit previews under previews/.
void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

}  // namespace rmlp

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

#include "rmlp/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "rmlp/error.hpp"
#include "rmlp/rng.hpp"

namespace rmlp {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[offset + i]) << (8 * i);
  return value;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> rmtf_encode(const Tensor& tensor) {
  const Shape& shape = tensor.shape();
  if (shape.size() > 255) throw ShapeError("rmtf: rank above 255");
  std::vector<std::uint8_t> out{'R', 'M', 'T', 'F'};
  out.reserve(10 + 8 * shape.size() + 8 * tensor.size());
  put_le<std::uint32_t>(out, kRmtfVersion);
  out.push_back(kRmtfDtypeF64);
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) put_le<std::uint64_t>(out, d);
  for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor rmtf_decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 'R' || bytes[1] != 'M' || bytes[2] != 'T' || bytes[3] != 'F') {
    throw FormatError("rmtf: bad magic");
  }
  if (bytes.size() < 8) throw FormatError("rmtf: truncated version");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kRmtfVersion) throw FormatError("rmtf: unsupported version " + std::to_string(version));
  if (bytes.size() < 9) throw FormatError("rmtf: truncated dtype");
  if (bytes[8] != kRmtfDtypeF64) throw FormatError("rmtf: unsupported dtype " + std::to_string(bytes[8]));
  if (bytes.size() < 10) throw FormatError("rmtf: truncated ndim");
  const std::size_t ndim = bytes[9];
  if (bytes.size() < 10 + 8 * ndim) throw FormatError("rmtf: truncated shape");
  Shape shape(ndim);
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    shape[i] = get_le<std::uint64_t>(bytes, 10 + 8 * i);
    if (shape[i] == 0) throw FormatError("rmtf: shape has a zero dimension");
    if (count > (std::size_t{1} << 60) / shape[i]) throw FormatError("rmtf: shape too large");
    count *= shape[i];
  }
  const std::size_t header = 10 + 8 * ndim;
  if (bytes.size() - header != 8 * count) {
    throw FormatError("rmtf: payload length " + std::to_string(bytes.size() - header) + " bytes, expected " +
                      std::to_string(8 * count));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, header + 8 * i));
  try {
    return Tensor(std::move(shape), std::move(data));
  } catch (const NumericError&) {
    throw FormatError("rmtf: payload holds non-finite values");
  }
}

void rmtf_write(const std::filesystem::path& path, const Tensor& tensor) { write_file(path, rmtf_encode(tensor)); }

Tensor rmtf_read(const std::filesystem::path& path) { return rmtf_decode(read_file(path)); }

Tensor load_pgm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* field) {
    skip_space();
    std::size_t value = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw FormatError(std::string("pgm: missing ") + field);
    return value;
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw UnsupportedFormatError("pgm: not a netpbm file");
  if (bytes[1] != '5') {
    throw UnsupportedFormatError(std::string("pgm: unsupported variant P") + static_cast<char>(bytes[1]) +
                                 " (only binary P5)");
  }
  pos = 2;
  const std::size_t width = read_int("width");
  const std::size_t height = read_int("height");
  const std::size_t maxval = read_int("maxval");
  if (maxval != 255) throw UnsupportedFormatError("pgm: maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("pgm: missing header terminator");
  ++pos;
  if (width == 0 || height == 0) throw FormatError("pgm: zero image dimension");
  if (bytes.size() - pos != width * height) {
    throw FormatError("pgm: pixel data length " + std::to_string(bytes.size() - pos) + ", expected " +
                      std::to_string(width * height));
  }
  std::vector<double> data(width * height);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(bytes[pos + i]) / 255.0;
  return Tensor({height, width}, std::move(data));
}

void write_pgm(const std::filesystem::path& path, const RowMatrix& image) {
  std::ostringstream header;
  header << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image.data()[i], 0.0, 1.0);
    bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  write_file(path, bytes);
}

void SyntheticSpec::validate() const {
  if (count < 2) throw ConfigError("dataset count must be >= 2");
  if (classes < 2) throw ConfigError("dataset classes must be >= 2");
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("dataset image_size must be a positive multiple of patch_size");
  }
  if (image_size / patch_size < 2) throw ConfigError("dataset needs at least a 2x2 patch grid");
  if (!(noise_sigma >= 0.0)) throw ConfigError("dataset noise_sigma must be >= 0");
}

SyntheticDataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t s = spec.image_size, p = spec.patch_size, g = s / p;
  SyntheticDataset out;
  out.spec = spec;
  for (std::size_t i = 0; i < spec.count; ++i) {
    Xoshiro256 rng(derive_seed(spec.seed, i));
    const int label = static_cast<int>(i % spec.classes);
    const double c = static_cast<double>(label);
    // Class signature: period (pixels) and stripe orientation.
    const double period = 3.0 + 2.0 * c;
    const double angle = std::numbers::pi * c / static_cast<double>(spec.classes);
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    const std::size_t band = 1 + rng.below(std::max<std::size_t>(1, g / 2));
    const std::size_t first = rng.below(g - band + 1);

    BoolGrid mask = BoolGrid::Constant(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g), false);
    mask.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(band)).setConstant(true);
    std::vector<double> px(s * s, 0.5);
    for (std::size_t r = first * p; r < (first + band) * p; ++r) {
      for (std::size_t q = 0; q < s; ++q) {
        const double u = static_cast<double>(q) * std::cos(angle) + static_cast<double>(r) * std::sin(angle);
        px[r * s + q] = 0.5 + 0.35 * std::sin(2.0 * std::numbers::pi * u / period + phase);
      }
    }
    for (double& v : px) v += spec.noise_sigma * rng.gaussian();
    out.images.emplace_back(Shape{s, s}, std::move(px));
    out.labels.push_back(label);
    out.masks.push_back(std::move(mask));
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "previews");
  const std::size_t n = data.images.size(), s = data.spec.image_size, g = s / data.spec.patch_size;
  std::vector<double> images, labels, masks;
  for (std::size_t i = 0; i < n; ++i) {
    images.insert(images.end(), data.images[i].data().begin(), data.images[i].data().end());
    labels.push_back(static_cast<double>(data.labels[i]));
    for (Eigen::Index k = 0; k < data.masks[i].size(); ++k) masks.push_back(data.masks[i].data()[k] ? 1.0 : 0.0);
    char name[32];
    std::snprintf(name, sizeof(name), "image_%04zu.pgm", i);
    write_pgm(dir / "previews" / name, data.images[i].to_matrix());
  }
  rmtf_write(dir / "images.rmtf", Tensor({n, s, s}, std::move(images)));
  rmtf_write(dir / "labels.rmtf", Tensor({n}, std::move(labels)));
  rmtf_write(dir / "masks.rmtf", Tensor({n, g, g}, std::move(masks)));
  const nlohmann::ordered_json manifest = {{"count", n},
                                           {"image_size", s},
                                           {"patch_size", data.spec.patch_size},
                                           {"classes", data.spec.classes},
                                           {"seed", data.spec.seed},
                                           {"noise_sigma", data.spec.noise_sigma}};
  std::ofstream(dir / "dataset.json") << manifest.dump(2) << '\n';
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw FormatError("dataset: missing dataset.json in " + dir.string());
  SyntheticDataset out;
  try {
    const auto manifest = nlohmann::json::parse(in);
    out.spec.count = manifest.at("count").get<std::size_t>();
    out.spec.image_size = manifest.at("image_size").get<std::size_t>();
    out.spec.patch_size = manifest.at("patch_size").get<std::size_t>();
    out.spec.classes = manifest.at("classes").get<std::size_t>();
    out.spec.seed = manifest.at("seed").get<std::uint64_t>();
    out.spec.noise_sigma = manifest.at("noise_sigma").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: bad dataset.json: ") + e.what());
  }
  const std::size_t n = out.spec.count, s = out.spec.image_size, g = s / out.spec.patch_size;
  const Tensor images = rmtf_read(dir / "images.rmtf");
  const Tensor labels = rmtf_read(dir / "labels.rmtf");
  const Tensor masks = rmtf_read(dir / "masks.rmtf");
  if (images.shape() != Shape{n, s, s}) throw FormatError("dataset: images.rmtf shape");
  if (labels.shape() != Shape{n}) throw FormatError("dataset: labels.rmtf shape");
  if (masks.shape() != Shape{n, g, g}) throw FormatError("dataset: masks.rmtf shape");
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = images.data().begin() + static_cast<std::ptrdiff_t>(i * s * s);
    out.images.emplace_back(Shape{s, s}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s * s)));
    out.labels.push_back(static_cast<int>(labels.data()[i]));
    BoolGrid mask(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g));
    for (std::size_t k = 0; k < g * g; ++k) mask.data()[k] = masks.data()[i * g * g + k] != 0.0;
    out.masks.push_back(std::move(mask));
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

}  // namespace rmlp

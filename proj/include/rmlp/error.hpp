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

#pragma once

#include <stdexcept>
#include <string>

namespace rmlp {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can separate validation failures from runtime failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Input that is well-formed but degenerate (duplicate points, zero variance).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf encountered in a tensor.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. The message names the failing field.
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration (unknown keys, out-of-range values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A training step produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : Error("training failure at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace rmlp

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

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to an immutable node. Operations create new
// nodes; when any input requires a gradient the new node remembers its
// parents and a local backward rule. Leaves created with requires_grad=false
// never receive a gradient buffer, which is how frozen parameters (the
// randomized head matrices) are kept out of training by construction.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rmlp {

using Shape = std::vector<std::size_t>;

template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrix = RowMatrixX<double>;
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  // Throws NumericError on NaN/Inf and ShapeError when sizes disagree.
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor from_matrix(const RowMatrix& m, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // rank 2 only
  std::size_t cols() const;  // rank 2 only
  std::span<const double> data() const;
  double item() const;  // single-element tensors
  double at(std::size_t i, std::size_t j) const;
  Eigen::Map<const RowMatrix> matrix() const;  // rank 2, or rank 1 as a row
  RowMatrix to_matrix() const { return matrix(); }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient buffer was allocated.
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  // In-place update of a leaf's values (optimizer and EMA steps only).
  std::span<double> mutable_data();

  // Same values, no tape history, requires_grad=false.
  Tensor detach() const;
  // Same values in a fresh leaf with the given requires_grad flag.
  Tensor clone(bool requires_grad) const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Topologically ordered view of the graph reachable from a scalar loss through
// nodes that require gradients. Parents always precede children.
class Tape {
 public:
  explicit Tape(const Tensor& loss);

  std::size_t size() const noexcept { return order_.size(); }
  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once,
  // children before parents. Intermediate gradient buffers are released.
  void backward();

 private:
  Tensor loss_;
  std::vector<detail::Node*> order_;
};

// Reverse accumulation into every requires_grad leaf reachable from `loss`.
void backward(const Tensor& loss);
// Zeroes (allocating if needed) the gradients of `leaves` first, so leaves not
// on the path of `loss` end with an all-zero gradient.
void grad(const Tensor& loss, std::span<const Tensor> leaves);

// --- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[p x q] + v[q] added to every row.
Tensor add_row(const Tensor& a, const Tensor& v);
// a[p x q] * v[q] multiplied into every row.
Tensor mul_row(const Tensor& a, const Tensor& v);
Tensor square(const Tensor& a);
Tensor gelu(const Tensor& x);
Tensor softmax_rows(const Tensor& x, double temperature = 1.0);
Tensor log_softmax_rows(const Tensor& x, double temperature = 1.0);
inline constexpr double kLayerNormEps = 1e-6;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// Rows of x where mask[i] is set are replaced by `token` (length = cols).
Tensor replace_rows(const Tensor& x, const std::vector<bool>& mask, const Tensor& token);
// Each row divided by its Euclidean norm.
Tensor normalize_rows(const Tensor& x, double eps = 1e-12);

// Extension point for composite operations implemented outside this file.
// `rule` receives the forward output, its gradient and one pointer per parent
// (null when that parent does not require a gradient) to accumulate into.
using BackwardRule = std::function<void(std::span<const double> out_value, std::span<const double> out_grad,
                                        std::span<std::vector<double>* const> parent_grads)>;
Tensor make_op(const char* name, Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               BackwardRule rule);

}  // namespace rmlp

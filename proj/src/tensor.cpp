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

#include "rmlp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "rmlp/error.hpp"

namespace rmlp {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until allocated
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardRule rule;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
  }
}

const Node& node_of(const Tensor& t) {
  if (!t.defined()) throw ShapeError("use of an undefined tensor");
  return *t.node();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

ConstMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Map as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return Map(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

// --- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) +
                     " values");
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
  }
  check_finite(data, "tensor construction");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  node_ = std::move(node);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::from_matrix(const RowMatrix& m, bool requires_grad) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(data),
                requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this).shape; }

std::size_t Tensor::size() const { return node_of(*this).value.size(); }

std::size_t Tensor::rows() const {
  require_rank(*this, 2, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_rank(*this, 2, "cols");
  return shape()[1];
}

std::span<const double> Tensor::data() const { return node_of(*this).value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return data()[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require_rank(*this, 2, "at");
  if (i >= rows() || j >= cols()) throw ShapeError("at(): index out of range");
  return data()[i * cols() + j];
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  if (rank() == 1) return as_matrix(data(), 1, shape()[0]);
  require_rank(*this, 2, "matrix");
  return as_matrix(data(), shape()[0], shape()[1]);
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }

bool Tensor::is_leaf() const { return node_of(*this).leaf; }

bool Tensor::has_grad() const {
  const Node& n = node_of(*this);
  return !n.grad.empty() && n.grad.size() == n.value.size();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  Node& n = *node_;
  if (!n.requires_grad) return;
  n.ensure_grad();
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tensor::clear_grad() { node_->grad.clear(); }

std::span<double> Tensor::mutable_data() {
  Node& n = *node_;
  if (!n.leaf) throw ShapeError("mutable_data() is only available on leaf tensors");
  return n.value;
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const { return Tensor(shape(), node_of(*this).value, requires_grad); }

// --- Tape ------------------------------------------------------------------

Tape::Tape(const Tensor& loss) : loss_(loss) {
  if (loss.size() != 1) throw ShapeError("gradient requires a scalar loss, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Tape::backward() {
  if (order_.empty()) return;
  Node* root = order_.back();
  root->ensure_grad();
  root->grad[0] += 1.0;
  std::vector<std::vector<double>*> parent_grads;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* node = *it;
    if (node->leaf) continue;
    if (node->grad.empty()) node->ensure_grad();
    parent_grads.clear();
    for (const auto& parent : node->parents) {
      parent_grads.push_back(parent->requires_grad ? &parent->ensure_grad() : nullptr);
    }
    node->rule(node->value, node->grad, parent_grads);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  for (Node* node : order_) {
    if (node->leaf) check_finite(node->grad, "gradient");
  }
}

void backward(const Tensor& loss) { Tape(loss).backward(); }

void grad(const Tensor& loss, std::span<const Tensor> leaves) {
  Tape tape(loss);
  for (Tensor leaf : leaves) leaf.zero_grad();
  tape.backward();
}

Tensor make_op(const char* name, Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               BackwardRule rule) {
  if (shape_size(shape) != value.size()) throw ShapeError(std::string(name) + ": result size mismatch");
  check_finite(value, name);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  node->leaf = false;
  for (const Tensor& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.node());
    node->rule = std::move(rule);
  }
  return Tensor(std::move(node));
}

// --- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(p * r);
  as_matrix(out, p, r).noalias() = a.matrix() * b.matrix();
  return make_op("matmul", {p, r}, std::move(out), {a, b},
                 [a, b, p, q, r](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   const auto G = as_matrix(g, p, r);
                   if (pg[0]) as_matrix(*pg[0], p, q).noalias() += G * b.matrix().transpose();
                   if (pg[1]) as_matrix(*pg[1], q, r).noalias() += a.matrix().transpose() * G;
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t p = a.rows(), q = a.cols();
  std::vector<double> out(p * q);
  as_matrix(out, q, p) = a.matrix().transpose();
  return make_op("transpose", {q, p}, std::move(out), {a},
                 [p, q](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   as_matrix(*pg[0], p, q) += as_matrix(g, q, p).transpose();
                 });
}

namespace {

template <typename F, typename Da, typename Db>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, F f, Da da, Db db) {
  require_same_shape(a, b, name);
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return make_op(name, a.shape(), std::move(out), {a, b},
                 [a, b, da, db](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   const auto av = a.data(), bv = b.data();
                   if (pg[0]) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * da(av[i], bv[i]);
                   }
                   if (pg[1]) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * db(av[i], bv[i]);
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_op("scale", a.shape(), std::move(out), {a},
                 [factor](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += factor * g[i];
                 });
}

Tensor add_row(const Tensor& a, const Tensor& v) {
  require_rank(a, 2, "add_row");
  const std::size_t p = a.rows(), q = a.cols();
  if (v.size() != q) throw ShapeError("add_row: row vector length " + std::to_string(v.size()) + " != " +
                                      std::to_string(q));
  std::vector<double> out(p * q);
  as_matrix(out, p, q) = a.matrix().rowwise() + as_matrix(v.data(), 1, q).row(0);
  return make_op("add_row", a.shape(), std::move(out), {a, v},
                 [p, q](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   const auto G = as_matrix(g, p, q);
                   if (pg[0]) as_matrix(*pg[0], p, q) += G;
                   if (pg[1]) as_matrix(*pg[1], 1, q) += G.colwise().sum();
                 });
}

Tensor mul_row(const Tensor& a, const Tensor& v) {
  require_rank(a, 2, "mul_row");
  const std::size_t p = a.rows(), q = a.cols();
  if (v.size() != q) throw ShapeError("mul_row: row vector length mismatch");
  std::vector<double> out(p * q);
  as_matrix(out, p, q) = a.matrix().array().rowwise() * as_matrix(v.data(), 1, q).row(0).array();
  return make_op("mul_row", a.shape(), std::move(out), {a, v},
                 [a, v, p, q](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   const auto G = as_matrix(g, p, q);
                   const auto V = as_matrix(v.data(), 1, q);
                   if (pg[0]) as_matrix(*pg[0], p, q).array() += G.array().rowwise() * V.row(0).array();
                   if (pg[1]) as_matrix(*pg[1], 1, q) += (G.array() * a.matrix().array()).colwise().sum().matrix();
                 });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor gelu(const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * normal_cdf(xv[i]);
  return make_op("gelu", x.shape(), std::move(out), {x},
                 [x](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   const auto xv = x.data();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     (*pg[0])[i] += g[i] * (normal_cdf(xv[i]) + xv[i] * normal_pdf(xv[i]));
                   }
                 });
}

namespace {

std::pair<std::size_t, std::size_t> matrix_dims(const Tensor& x, const char* op) {
  if (x.rank() == 1) return {1, x.shape()[0]};
  require_rank(x, 2, op);
  return {x.rows(), x.cols()};
}

void check_temperature(double temperature, const char* op) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DomainError(std::string(op) + ": temperature must be positive");
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x, double temperature) {
  check_temperature(temperature, "softmax_rows");
  const auto [p, q] = matrix_dims(x, "softmax_rows");
  std::vector<double> out(p * q);
  auto Y = as_matrix(out, p, q);
  const auto X = x.matrix();
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    const double mx = X.row(i).maxCoeff();
    Y.row(i) = ((X.row(i).array() - mx) / temperature).exp().matrix();
    Y.row(i) /= Y.row(i).sum();
  }
  return make_op("softmax_rows", x.shape(), std::move(out), {x},
                 [p, q, temperature](std::span<const double> y, std::span<const double> g,
                                     std::span<std::vector<double>* const> pg) {
                   const auto Y = as_matrix(y, p, q);
                   const auto G = as_matrix(g, p, q);
                   auto D = as_matrix(*pg[0], p, q);
                   for (Eigen::Index i = 0; i < Y.rows(); ++i) {
                     const double dot = Y.row(i).dot(G.row(i));
                     D.row(i).array() += Y.row(i).array() * (G.row(i).array() - dot) / temperature;
                   }
                 });
}

Tensor log_softmax_rows(const Tensor& x, double temperature) {
  check_temperature(temperature, "log_softmax_rows");
  const auto [p, q] = matrix_dims(x, "log_softmax_rows");
  std::vector<double> out(p * q);
  auto Y = as_matrix(out, p, q);
  const auto X = x.matrix();
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    const double mx = X.row(i).maxCoeff();
    const auto z = ((X.row(i).array() - mx) / temperature).eval();
    Y.row(i) = (z - std::log(z.exp().sum())).matrix();
  }
  return make_op("log_softmax_rows", x.shape(), std::move(out), {x},
                 [p, q, temperature](std::span<const double> y, std::span<const double> g,
                                     std::span<std::vector<double>* const> pg) {
                   const auto Y = as_matrix(y, p, q);
                   const auto G = as_matrix(g, p, q);
                   auto D = as_matrix(*pg[0], p, q);
                   for (Eigen::Index i = 0; i < Y.rows(); ++i) {
                     const double total = G.row(i).sum();
                     D.row(i).array() += (G.row(i).array() - Y.row(i).array().exp() * total) / temperature;
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  require_rank(x, 2, "layer_norm");
  const std::size_t p = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) throw ShapeError("layer_norm: gain/bias length must equal row width");
  // Normalized rows and inverse deviations are kept for the backward rule.
  auto xhat = std::make_shared<RowMatrix>(p, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(p);
  const auto X = x.matrix();
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = X.row(i).mean();
    const double var = (X.row(i).array() - mu).square().mean();
    (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
    xhat->row(i) = (X.row(i).array() - mu) * (*inv_std)(i);
  }
  const auto G = as_matrix(gain.data(), 1, d);
  const auto B = as_matrix(bias.data(), 1, d);
  std::vector<double> out(p * d);
  as_matrix(out, p, d) = (xhat->array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  return make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                 [gain, xhat, inv_std, p, d](auto, std::span<const double> g,
                                             std::span<std::vector<double>* const> pg) {
                   const auto Gy = as_matrix(g, p, d);
                   const auto Gain = as_matrix(gain.data(), 1, d);
                   if (pg[0]) {
                     auto Dx = as_matrix(*pg[0], p, d);
                     const double n = static_cast<double>(d);
                     for (Eigen::Index i = 0; i < Gy.rows(); ++i) {
                       const Eigen::RowVectorXd dxhat = Gy.row(i).cwiseProduct(Gain.row(0));
                       const double s1 = dxhat.sum();
                       const double s2 = dxhat.dot(xhat->row(i));
                       Dx.row(i).array() +=
                           (*inv_std)(i) / n * (n * dxhat.array() - s1 - xhat->row(i).array() * s2);
                     }
                   }
                   if (pg[1]) as_matrix(*pg[1], 1, d) += (Gy.array() * xhat->array()).colwise().sum().matrix();
                   if (pg[2]) as_matrix(*pg[2], 1, d) += Gy.colwise().sum();
                 });
}

Tensor sum(const Tensor& x) {
  const auto v = x.data();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_op("sum", {}, {total}, {x},
                 [](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   for (double& d : *pg[0]) d += g[0];
                 });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {x},
                 [](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t p = x.rows(), q = x.cols();
  if (count == 0 || start + count > q) throw ShapeError("slice_cols: range out of bounds");
  std::vector<double> out(p * count);
  as_matrix(out, p, count) = x.matrix().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  return make_op("slice_cols", {p, count}, std::move(out), {x},
                 [p, q, start, count](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   as_matrix(*pg[0], p, q).middleCols(static_cast<Eigen::Index>(start),
                                                      static_cast<Eigen::Index>(count)) += as_matrix(g, p, count);
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const std::size_t p = x.rows(), q = x.cols();
  if (count == 0 || start + count > p) throw ShapeError("slice_rows: range out of bounds");
  const auto v = x.data();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(start * q),
                          v.begin() + static_cast<std::ptrdiff_t>((start + count) * q));
  return make_op("slice_rows", {count, q}, std::move(out), {x},
                 [q, start](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[start * q + i] += g[i];
                 });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "select_rows");
  const std::size_t p = x.rows(), q = x.cols();
  if (rows.empty()) throw ShapeError("select_rows: empty selection");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * q);
  const auto v = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= p) throw ShapeError("select_rows: row index out of range");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[r] * q), q, out.begin() + static_cast<std::ptrdiff_t>(r * q));
  }
  const std::size_t n = idx.size();
  return make_op("select_rows", {n, q}, std::move(out), {x},
                 [idx = std::move(idx), q](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     for (std::size_t j = 0; j < q; ++j) (*pg[0])[idx[r] * q + j] += g[r * q + j];
                   }
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t q = parts[0].rank() == 1 ? parts[0].size() : parts[0].cols();
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  std::size_t rows = 0;
  for (const Tensor& t : parts) {
    const std::size_t tq = t.rank() == 1 ? t.size() : t.cols();
    if (tq != q || t.rank() > 2) throw ShapeError("concat_rows: column count mismatch");
    offsets.push_back(out.size());
    out.insert(out.end(), t.data().begin(), t.data().end());
    rows += t.size() / q;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op("concat_rows", {rows, q}, std::move(out), std::move(parents),
                 [offsets](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   for (std::size_t k = 0; k < pg.size(); ++k) {
                     if (!pg[k]) continue;
                     auto& dst = *pg[k];
                     for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[k] + i];
                   }
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t p = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t q = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != p) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(t.cols());
    q += t.cols();
  }
  std::vector<double> out(p * q);
  auto Y = as_matrix(out, p, q);
  Eigen::Index col = 0;
  for (const Tensor& t : parts) {
    Y.middleCols(col, static_cast<Eigen::Index>(t.cols())) = t.matrix();
    col += static_cast<Eigen::Index>(t.cols());
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op("concat_cols", {p, q}, std::move(out), std::move(parents),
                 [widths, p, q](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   const auto G = as_matrix(g, p, q);
                   Eigen::Index col = 0;
                   for (std::size_t k = 0; k < pg.size(); ++k) {
                     const auto w = static_cast<Eigen::Index>(widths[k]);
                     if (pg[k]) as_matrix(*pg[k], p, widths[k]) += G.middleCols(col, w);
                     col += w;
                   }
                 });
}

Tensor replace_rows(const Tensor& x, const std::vector<bool>& mask, const Tensor& token) {
  require_rank(x, 2, "replace_rows");
  const std::size_t p = x.rows(), q = x.cols();
  if (mask.size() != p) throw ShapeError("replace_rows: mask length must equal row count");
  if (token.size() != q) throw ShapeError("replace_rows: token length must equal row width");
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto t = token.data();
  for (std::size_t i = 0; i < p; ++i) {
    if (mask[i]) std::copy(t.begin(), t.end(), out.begin() + static_cast<std::ptrdiff_t>(i * q));
  }
  return make_op("replace_rows", x.shape(), std::move(out), {x, token},
                 [mask, p, q](auto, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                   for (std::size_t i = 0; i < p; ++i) {
                     auto* dst = mask[i] ? pg[1] : pg[0];
                     if (!dst) continue;
                     const std::size_t base = mask[i] ? 0 : i * q;
                     for (std::size_t j = 0; j < q; ++j) (*dst)[base + j] += g[i * q + j];
                   }
                 });
}

Tensor normalize_rows(const Tensor& x, double eps) {
  require_rank(x, 2, "normalize_rows");
  const std::size_t p = x.rows(), q = x.cols();
  auto norms = std::make_shared<Eigen::VectorXd>(x.matrix().rowwise().norm().array().max(eps).matrix());
  std::vector<double> out(p * q);
  as_matrix(out, p, q) = norms->cwiseInverse().asDiagonal() * x.matrix();
  return make_op("normalize_rows", x.shape(), std::move(out), {x},
                 [norms, p, q](std::span<const double> y, std::span<const double> g,
                               std::span<std::vector<double>* const> pg) {
                   const auto Y = as_matrix(y, p, q);
                   const auto G = as_matrix(g, p, q);
                   auto D = as_matrix(*pg[0], p, q);
                   for (Eigen::Index i = 0; i < Y.rows(); ++i) {
                     const double dot = Y.row(i).dot(G.row(i));
                     D.row(i) += (G.row(i) - dot * Y.row(i)) / (*norms)(i);
                   }
                 });
}

}  // namespace rmlp

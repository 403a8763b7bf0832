/*
 * Copyright 2026 The StarPrompt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace starprompt {

/// Every tensor is a row-major matrix; vectors are 1 x n, scalars 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  [[nodiscard]] std::size_t numel() const { return rows * cols; }
  [[nodiscard]] std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  const char* op = "leaf";
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense tensor with reverse-mode differentiation.
///
/// Copies share the underlying node (handle semantics); use detach() for an
/// independent value copy. A graph is recorded only when some operand
/// requires grad, so frozen computations allocate no graph at all.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor from_data(std::size_t rows, std::size_t cols, std::vector<double> data);
  /// 1 x n row vector.
  static Tensor row(std::vector<double> data);
  static Tensor scalar(double value);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rows() const { return shape().rows; }
  [[nodiscard]] std::size_t cols() const { return shape().cols; }
  [[nodiscard]] std::size_t numel() const { return shape().numel(); }

  [[nodiscard]] std::span<const double> data() const;
  /// Writable view; only leaves may be mutated in place.
  [[nodiscard]] std::span<double> mutable_data();
  [[nodiscard]] double item() const;
  [[nodiscard]] double at(std::size_t r, std::size_t c) const;
  [[nodiscard]] std::span<const double> row_span(std::size_t r) const;
  [[nodiscard]] std::vector<double> to_vector() const;

  [[nodiscard]] bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  [[nodiscard]] bool is_leaf() const;
  [[nodiscard]] const char* op() const;

  [[nodiscard]] bool has_grad() const;
  /// Accumulated gradient; all zeros when nothing has flowed in yet.
  [[nodiscard]] std::vector<double> grad() const;
  void zero_grad();

  [[nodiscard]] const std::string& name() const;
  Tensor& set_name(std::string name);

  /// Independent leaf holding a copy of the values.
  [[nodiscard]] Tensor detach() const;

  [[nodiscard]] const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Primitive ops. Each checks shapes (ShapeError) and finiteness (NumericError)
// and records its backward rule when any operand requires grad.

/// (m x k) * (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise with broadcasting of a 1 x n row, an m x 1 column, or a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor gelu(const Tensor& x);
/// Per-row normalization without learned affine, eps = 1e-5.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
/// Per-row, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Per-row x / max(|x|, eps).
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);
/// Cosine between row i of a and row i of b (b may be a single row); m x 1.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols);
/// Mean of all entries, 1 x 1.
Tensor mean(const Tensor& x);
/// Sum of all entries, 1 x 1.
Tensor sum(const Tensor& x);
/// Sum over columns, m x 1.
Tensor row_sum(const Tensor& x);
/// Mean over rows, 1 x n.
Tensor mean_rows(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double factor, const Tensor& x);
Tensor operator-(const Tensor& x);

/// Reverse sweep from a scalar loss. Leaves that require grad accumulate
/// their total derivative; intermediate gradients and closures are released,
/// so a second call on the same graph throws StateError.
void backward(const Tensor& loss);

/// FNV-1a over the bit patterns of the values.
std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_tensor(const Tensor& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace starprompt

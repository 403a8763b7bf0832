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
#include "starprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <unordered_set>
#include <utility>

#include "starprompt/errors.hpp"

namespace starprompt {

std::string Shape::str() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) {
    grad.assign(shape.numel(), 0.0);
  }
  return grad;
}

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value");
    }
  }
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

const Node& node_of(const char* op, const Tensor& t) {
  if (!t.defined()) {
    throw StateError(std::string(op) + ": undefined tensor operand");
  }
  return *t.node();
}

Tensor make_op(const char* op, Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
               std::function<void(Node&)> backward_fn) {
  check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  node->op = op;
  node->leaf = false;
  const bool needs_grad = std::any_of(parents.begin(), parents.end(),
                                      [](const NodePtr& p) { return p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// Broadcast index map for a binary elementwise op.
struct Broadcast {
  Shape out;
  Shape a;
  Shape b;

  [[nodiscard]] std::size_t ia(std::size_t r, std::size_t c) const {
    return (a.rows == 1 ? 0 : r) * a.cols + (a.cols == 1 ? 0 : c);
  }
  [[nodiscard]] std::size_t ib(std::size_t r, std::size_t c) const {
    return (b.rows == 1 ? 0 : r) * b.cols + (b.cols == 1 ? 0 : c);
  }
};

Broadcast broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    shape_error(op, a, b);
  };
  return Broadcast{Shape{dim(a.rows, b.rows), dim(a.cols, b.cols)}, a, b};
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return full(rows, cols, 0.0); }

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  return from_data(rows, cols, std::vector<double>(rows * cols, value));
}

Tensor Tensor::from_data(std::size_t rows, std::size_t cols, std::vector<double> data) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("Tensor: dimensions must be positive, got " + Shape{rows, cols}.str());
  }
  if (data.size() != rows * cols) {
    throw ShapeError("Tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                     Shape{rows, cols}.str());
  }
  check_finite("Tensor", data);
  auto node = std::make_shared<Node>();
  node->shape = Shape{rows, cols};
  node->value = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::row(std::vector<double> data) {
  const std::size_t n = data.size();
  return from_data(1, n, std::move(data));
}

Tensor Tensor::scalar(double value) { return from_data(1, 1, {value}); }

const Shape& Tensor::shape() const { return node_of("shape", *this).shape; }

std::span<const double> Tensor::data() const { return node_of("data", *this).value; }

std::span<double> Tensor::mutable_data() {
  node_of("mutable_data", *this);
  if (!node_->leaf) {
    throw StateError("mutable_data: only leaf tensors may be written in place");
  }
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor is not a scalar, shape " + shape().str());
  }
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const Shape& s = shape();
  if (r >= s.rows || c >= s.cols) {
    throw ShapeError("at: index (" + std::to_string(r) + "," + std::to_string(c) + ") outside " + s.str());
  }
  return node_->value[r * s.cols + c];
}

std::span<const double> Tensor::row_span(std::size_t r) const {
  const Shape& s = shape();
  if (r >= s.rows) {
    throw ShapeError("row_span: row " + std::to_string(r) + " outside " + s.str());
  }
  return std::span<const double>(node_->value).subspan(r * s.cols, s.cols);
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return node_of("requires_grad", *this).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_of("set_requires_grad", *this);
  if (!node_->leaf) {
    throw StateError("set_requires_grad: only leaf tensors can change trainability");
  }
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return node_of("is_leaf", *this).leaf; }

const char* Tensor::op() const { return node_of("op", *this).op; }

bool Tensor::has_grad() const { return !node_of("has_grad", *this).grad.empty(); }

std::vector<double> Tensor::grad() const {
  const Node& n = node_of("grad", *this);
  if (n.grad.empty()) {
    return std::vector<double>(n.shape.numel(), 0.0);
  }
  return n.grad;
}

void Tensor::zero_grad() {
  node_of("zero_grad", *this);
  node_->grad.clear();
}

const std::string& Tensor::name() const { return node_of("name", *this).name; }

Tensor& Tensor::set_name(std::string name) {
  node_of("set_name", *this);
  node_->name = std::move(name);
  return *this;
}

Tensor Tensor::detach() const {
  const Node& n = node_of("detach", *this);
  auto copy = std::make_shared<Node>();
  copy->shape = n.shape;
  copy->value = n.value;
  copy->name = n.name;
  return Tensor(std::move(copy));
}

// ---------------------------------------------------------------- primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node& na = node_of("matmul", a);
  const Node& nb = node_of("matmul", b);
  const std::size_t m = na.shape.rows;
  const std::size_t k = na.shape.cols;
  const std::size_t n = nb.shape.cols;
  if (nb.shape.rows != k) {
    shape_error("matmul", na.shape, nb.shape);
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = na.value.data();
  const double* pb = nb.value.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  return make_op("matmul", Shape{m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const double* g = self.grad.data();
    if (A.requires_grad) {
      auto& ga = A.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B.value.data() + p * n;
          const double* grow = g + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            acc += grow[j] * brow[j];
          }
          ga[i * k + p] += acc;
        }
      }
    }
    if (B.requires_grad) {
      auto& gb = B.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.value[i * k + p];
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) {
            gbrow[j] += av * grow[j];
          }
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Node& na = node_of("add", a);
  const Node& nb = node_of("add", b);
  const Broadcast bc = broadcast_shapes("add", na.shape, nb.shape);
  std::vector<double> out(bc.out.numel());
  for (std::size_t r = 0; r < bc.out.rows; ++r) {
    for (std::size_t c = 0; c < bc.out.cols; ++c) {
      out[r * bc.out.cols + c] = na.value[bc.ia(r, c)] + nb.value[bc.ib(r, c)];
    }
  }
  return make_op("add", bc.out, std::move(out), {a.node(), b.node()}, [bc](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    for (std::size_t r = 0; r < bc.out.rows; ++r) {
      for (std::size_t c = 0; c < bc.out.cols; ++c) {
        const double g = self.grad[r * bc.out.cols + c];
        if (A.requires_grad) A.grad_buffer()[bc.ia(r, c)] += g;
        if (B.requires_grad) B.grad_buffer()[bc.ib(r, c)] += g;
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Node& na = node_of("mul", a);
  const Node& nb = node_of("mul", b);
  const Broadcast bc = broadcast_shapes("mul", na.shape, nb.shape);
  std::vector<double> out(bc.out.numel());
  for (std::size_t r = 0; r < bc.out.rows; ++r) {
    for (std::size_t c = 0; c < bc.out.cols; ++c) {
      out[r * bc.out.cols + c] = na.value[bc.ia(r, c)] * nb.value[bc.ib(r, c)];
    }
  }
  return make_op("mul", bc.out, std::move(out), {a.node(), b.node()}, [bc](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    for (std::size_t r = 0; r < bc.out.rows; ++r) {
      for (std::size_t c = 0; c < bc.out.cols; ++c) {
        const double g = self.grad[r * bc.out.cols + c];
        const std::size_t ia = bc.ia(r, c);
        const std::size_t ib = bc.ib(r, c);
        if (A.requires_grad) A.grad_buffer()[ia] += g * B.value[ib];
        if (B.requires_grad) B.grad_buffer()[ib] += g * A.value[ia];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& x, double factor) {
  const Node& nx = node_of("scale", x);
  if (!std::isfinite(factor)) {
    throw NumericError("scale: non-finite factor");
  }
  std::vector<double> out(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = nx.value[i] * factor;
  }
  return make_op("scale", nx.shape, std::move(out), {x.node()}, [factor](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * factor;
    }
  });
}

Tensor gelu(const Tensor& x) {
  const Node& nx = node_of("gelu", x);
  std::vector<double> out(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = nx.value[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  return make_op("gelu", nx.shape, std::move(out), {x.node()}, [](Node& self) {
    Node& X = *self.parents[0];
    auto& gx = X.grad_buffer();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = X.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor layer_norm(const Tensor& x, double eps) {
  const Node& nx = node_of("layer_norm", x);
  check_finite("layer_norm", nx.value);
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(nx.value.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = nx.value.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (xr[c] - mu) * inv_std[r];
  }
  return make_op("layer_norm", nx.shape, std::move(out), {x.node()},
                 [rows, cols, inv_std = std::move(inv_std)](Node& self) {
                   auto& gx = self.parents[0]->grad_buffer();
                   const double n = static_cast<double>(cols);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = self.value.data() + r * cols;
                     const double* g = self.grad.data() + r * cols;
                     double mean_g = 0.0;
                     double mean_gy = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) {
                       mean_g += g[c];
                       mean_gy += g[c] * y[c];
                     }
                     mean_g /= n;
                     mean_gy /= n;
                     for (std::size_t c = 0; c < cols; ++c) {
                       gx[r * cols + c] += inv_std[r] * (g[c] - mean_g - y[c] * mean_gy);
                     }
                   }
                 });
}

Tensor softmax(const Tensor& x) {
  const Node& nx = node_of("softmax", x);
  check_finite("softmax", nx.value);
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(nx.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = nx.value.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp(xr[c] - mx);
      z += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return make_op("softmax", nx.shape, std::move(out), {x.node()}, [rows, cols](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const Node& nx = node_of("log_softmax", x);
  check_finite("log_softmax", nx.value);
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(nx.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = nx.value.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xr[c] - lse;
  }
  return make_op("log_softmax", nx.shape, std::move(out), {x.node()}, [rows, cols](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] - std::exp(y[c]) * gsum;
    }
  });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  const Node& nx = node_of("l2_normalize", x);
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(nx.value.size());
  std::vector<double> norms(rows);
  std::vector<bool> clamped(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = nx.value.data() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += xr[c] * xr[c];
    const double norm = std::sqrt(ss);
    clamped[r] = norm <= eps;
    norms[r] = clamped[r] ? eps : norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xr[c] / norms[r];
  }
  return make_op("l2_normalize", nx.shape, std::move(out), {x.node()},
                 [rows, cols, norms = std::move(norms), clamped = std::move(clamped)](Node& self) {
                   auto& gx = self.parents[0]->grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = self.value.data() + r * cols;
                     const double* g = self.grad.data() + r * cols;
                     double dot = 0.0;
                     if (!clamped[r]) {
                       for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
                     }
                     for (std::size_t c = 0; c < cols; ++c) {
                       gx[r * cols + c] += (g[c] - y[c] * dot) / norms[r];
                     }
                   }
                 });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  const Shape& sa = node_of("cosine_similarity", a).shape;
  const Shape& sb = node_of("cosine_similarity", b).shape;
  if (sa.cols != sb.cols || (sb.rows != sa.rows && sb.rows != 1)) {
    shape_error("cosine_similarity", sa, sb);
  }
  return row_sum(mul(l2_normalize(a), l2_normalize(b)));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ShapeError("concat_rows: no operands");
  }
  const std::size_t cols = node_of("concat_rows", parts[0]).shape.cols;
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    const Node& n = node_of("concat_rows", p);
    if (n.shape.cols != cols) {
      shape_error("concat_rows", parts[0].shape(), n.shape);
    }
    offsets.push_back(rows * cols);
    rows += n.shape.rows;
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.node()->value.begin(), p.node()->value.end());
  }
  return make_op("concat_rows", Shape{rows, cols}, std::move(out), std::move(parents),
                 [offsets = std::move(offsets)](Node& self) {
                   for (std::size_t i = 0; i < self.parents.size(); ++i) {
                     Node& p = *self.parents[i];
                     if (!p.requires_grad) continue;
                     auto& gp = p.grad_buffer();
                     for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += self.grad[offsets[i] + j];
                   }
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ShapeError("concat_cols: no operands");
  }
  const std::size_t rows = node_of("concat_cols", parts[0]).shape.rows;
  std::size_t cols = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> col_offsets;
  for (const Tensor& p : parts) {
    const Node& n = node_of("concat_cols", p);
    if (n.shape.rows != rows) {
      shape_error("concat_cols", parts[0].shape(), n.shape);
    }
    col_offsets.push_back(cols);
    cols += n.shape.cols;
    parents.push_back(p.node());
  }
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Node& n = *parts[i].node();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(n.value.data() + r * n.shape.cols, n.shape.cols, out.data() + r * cols + col_offsets[i]);
    }
  }
  return make_op("concat_cols", Shape{rows, cols}, std::move(out), std::move(parents),
                 [rows, cols, col_offsets = std::move(col_offsets)](Node& self) {
                   for (std::size_t i = 0; i < self.parents.size(); ++i) {
                     Node& p = *self.parents[i];
                     if (!p.requires_grad) continue;
                     auto& gp = p.grad_buffer();
                     const std::size_t pc = p.shape.cols;
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t c = 0; c < pc; ++c) {
                         gp[r * pc + c] += self.grad[r * cols + col_offsets[i] + c];
                       }
                     }
                   }
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const Node& nx = node_of("slice_rows", x);
  if (count == 0 || begin + count > nx.shape.rows) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + nx.shape.str());
  }
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(nx.value.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          nx.value.begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
  return make_op("slice_rows", Shape{count, cols}, std::move(out), {x.node()}, [begin, cols](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * cols + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const Node& nx = node_of("slice_cols", x);
  if (count == 0 || begin + count > nx.shape.cols) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + nx.shape.str());
  }
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(nx.value.data() + r * cols + begin, count, out.data() + r * count);
  }
  return make_op("slice_cols", Shape{rows, count}, std::move(out), {x.node()},
                 [rows, cols, begin, count](Node& self) {
                   auto& gx = self.parents[0]->grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t c = 0; c < count; ++c) gx[r * cols + begin + c] += self.grad[r * count + c];
                   }
                 });
}

Tensor transpose(const Tensor& x) {
  const Node& nx = node_of("transpose", x);
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = nx.value[r * cols + c];
  }
  return make_op("transpose", Shape{cols, rows}, std::move(out), {x.node()}, [rows, cols](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[c * rows + r];
    }
  });
}

Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols) {
  const Node& nx = node_of("reshape", x);
  if (rows * cols != nx.shape.numel() || rows == 0 || cols == 0) {
    shape_error("reshape", nx.shape, Shape{rows, cols});
  }
  return make_op("reshape", Shape{rows, cols}, nx.value, {x.node()}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  const Node& nx = node_of("sum", x);
  double acc = 0.0;
  for (double v : nx.value) acc += v;
  return make_op("sum", Shape{1, 1}, {acc}, {x.node()}, [](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (double& g : gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const Node& nx = node_of("mean", x);
  const double n = static_cast<double>(nx.value.size());
  double acc = 0.0;
  for (double v : nx.value) acc += v;
  return make_op("mean", Shape{1, 1}, {acc / n}, {x.node()}, [n](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (double& g : gx) g += self.grad[0] / n;
  });
}

Tensor row_sum(const Tensor& x) {
  const Node& nx = node_of("row_sum", x);
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r] += nx.value[r * cols + c];
  }
  return make_op("row_sum", Shape{rows, 1}, std::move(out), {x.node()}, [rows, cols](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[r];
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  const Node& nx = node_of("mean_rows", x);
  const std::size_t rows = nx.shape.rows;
  const std::size_t cols = nx.shape.cols;
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += nx.value[r * cols + c];
  }
  for (double& v : out) v /= static_cast<double>(rows);
  return make_op("mean_rows", Shape{1, cols}, std::move(out), {x.node()}, [rows, cols](Node& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[c] * inv;
    }
  });
}

Tensor log(const Tensor& x) {
  const Node& nx = node_of("log", x);
  std::vector<double> out(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(nx.value[i] > 0.0)) {
      throw NumericError("log: non-positive input " + std::to_string(nx.value[i]));
    }
    out[i] = std::log(nx.value[i]);
  }
  return make_op("log", nx.shape, std::move(out), {x.node()}, [](Node& self) {
    Node& X = *self.parents[0];
    auto& gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] / X.value[i];
  });
}

Tensor abs(const Tensor& x) {
  const Node& nx = node_of("abs", x);
  std::vector<double> out(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(nx.value[i]);
  return make_op("abs", nx.shape, std::move(out), {x.node()}, [](Node& self) {
    Node& X = *self.parents[0];
    auto& gx = X.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = X.value[i];
      const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      gx[i] += self.grad[i] * sign;
    }
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator*(double factor, const Tensor& x) { return scale(x, factor); }
Tensor operator-(const Tensor& x) { return scale(x, -1.0); }

// ---------------------------------------------------------------- backward

void backward(const Tensor& loss) {
  if (!loss.defined()) {
    throw StateError("backward: undefined loss");
  }
  const NodePtr& root = loss.node();
  if (root->shape.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + root->shape.str());
  }
  if (root->consumed) {
    throw StateError("backward: graph already consumed; rebuild the loss before calling backward again");
  }
  if (!root->requires_grad) {
    throw StateError("backward: loss does not depend on any tensor that requires grad");
  }

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodePtr> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward && !n.grad.empty()) {
      n.backward(n);
    }
  }
  for (const NodePtr& n : order) {
    if (n->leaf) continue;
    std::vector<double>().swap(n->grad);
    n->backward = nullptr;
    n->parents.clear();
    n->consumed = true;
  }
}

std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::uint64_t hash_tensor(const Tensor& t, std::uint64_t seed) {
  const std::uint64_t shape_seed = hash_values(
      std::vector<double>{static_cast<double>(t.rows()), static_cast<double>(t.cols())}, seed);
  return hash_values(t.data(), shape_seed);
}

}  // namespace starprompt

// Copyright 2026 The dann-emotion Authors. All Rights Reserved.
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

// Dense row-major matrices and a tape-based reverse-mode differentiator.
//
// Every value is a 2-D matrix of doubles; column vectors are d x 1 and
// sequences are L x d with one position per row. A Tape records one forward
// pass. Operations take Var handles and append nodes, each carrying the rule
// that maps the output gradient back onto its inputs. Tape::backward walks
// the nodes once in reverse recording order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dann {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidValueError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Tensor: " + std::to_string(data_.size()) +
                           " values do not fill shape " + shape_string());
    }
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("Tensor::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
  }
  static Tensor column(std::span<const double> values) {
    return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }
  static Tensor row(std::span<const double> values) {
    return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  const std::vector<double>& values() const { return data_; }

  double item() const {
    if (size() != 1) throw DimensionError("Tensor::item on shape " + shape_string());
    return data_[0];
  }

  std::string shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape& tape() const {
    if (tape_ == nullptr) throw TapeError("Var is not bound to a tape");
    return *tape_;
  }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Backward rule: given the output gradient, accumulate into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }
  Var variable(Tensor value) { return push(std::move(value), true, {}); }

  // Appends an operation node. The backward rule runs only if some input
  // requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      check_owned(v);
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      check_owned(v);
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor& value(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }
  bool requires_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // Gradient accumulator for `v`, zero-initialised on first touch, or
  // nullptr when `v` does not participate in differentiation.
  Tensor* grad_buffer(Var v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  void backward(Var loss) {
    if (nodes_.empty()) throw TapeError("backward: tape is empty");
    check_owned(loss);
    if (backward_done_) throw TapeError("backward: tape already consumed");
    const Node& root = nodes_[loss.id()];
    if (root.value.size() != 1) {
      throw TapeError("backward: loss must be scalar, got " + root.value.shape_string());
    }
    backward_done_ = true;
    if (!root.requires_grad) return;
    nodes_[loss.id()].grad = Tensor(1, 1, 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  // Gradient of the last backward() loss with respect to `v`; zeros when
  // `v` was not on a path to the loss.
  Tensor grad(Var v) const {
    check_owned(v);
    if (!backward_done_) throw TapeError("grad: backward has not been run");
    const Node& n = nodes_[v.id()];
    if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    if (backward_done_) throw TapeError("record: tape already consumed by backward");
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }
  void check_owned(Var v) const {
    if (&v.tape() != this || v.id() >= nodes_.size()) {
      throw TapeError("Var does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape().value(*this); }

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

inline void require_same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw TapeError(std::string(op) + ": operands on different tapes");
}

// out += a * b (m x k by k x n)
inline void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = &b(p, 0);
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out += a * b^T (m x k by n x k)
inline void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b(j, 0);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      out(i, j) += s;
    }
  }
}

// out += a^T * b (k x m by k x n)
inline void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = &b(p, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      double* orow = &out(i, 0);
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

template <class F>
Var unary(Var x, F&& f, std::function<double(double in, double out)> dfdx) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tape& tape = x.tape();
  const std::size_t id = tape.size();
  return tape.record(std::move(out), {x}, [x, id, dfdx = std::move(dfdx)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (gx == nullptr) return;
    const Tensor& in = t.value(x);
    const Tensor& o = t.value(Var(&t, id));
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * dfdx(in[i], o[i]);
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + av.shape_string() + " * " +
                         bv.shape_string());
  }
  Tensor out(av.rows(), bv.cols());
  detail::gemm_acc(av, bv, out);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) detail::gemm_nt_acc(g, t.value(b), *ga);
    if (Tensor* gb = t.grad_buffer(b)) detail::gemm_tn_acc(t.value(a), g, *gb);
  });
}

inline Var transpose(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.cols(), xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(j, i) = xv(i, j);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < gx->rows(); ++i)
      for (std::size_t j = 0; j < gx->cols(); ++j) (*gx)(i, j) += g(j, i);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape("add", a, b);
  detail::require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape("sub", a, b);
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.grad_buffer(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

// Hadamard product.
inline Var mul(Var a, Var b) {
  detail::require_same_tape("mul", a, b);
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += factor * g[i];
  });
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var add_scalar(Var x, double offset) {
  Tensor out = x.value();
  for (double& v : out.data()) v += offset;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

// 1 - x
inline Var one_minus(Var x) { return add_scalar(neg(x), 1.0); }

inline Var tanh(Var x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double o) { return 1.0 - o * o; });
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x,
      [](double v) {
        // Split by sign so exp never overflows.
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double o) { return o * (1.0 - o); });
}

// x (m x n) plus the 1 x n row `bias` added to every row.
inline Var add_bias(Var x, Var bias) {
  detail::require_same_tape("add_bias", x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " does not fit " +
                         xv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (Tensor* gb = t.grad_buffer(bias))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*gb)[j] += g(i, j);
  });
}

// Row i of x (m x n) multiplied by s(i, 0) for an m x 1 column s.
inline Var scale_rows(Var x, Var s) {
  detail::require_same_tape("scale_rows", x, s);
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != xv.rows()) {
    throw DimensionError("scale_rows: scales " + sv.shape_string() + " do not fit " +
                         xv.shape_string());
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= sv[i];
  return x.tape().record(std::move(out), {x, s}, [x, s](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& sv = t.value(s);
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) (*gx)(i, j) += g(i, j) * sv[i];
    if (Tensor* gs = t.grad_buffer(s))
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) acc += g(i, j) * xv(i, j);
        (*gs)[i] += acc;
      }
  });
}

inline Tensor softmax_rows(const Tensor& x) {
  if (x.cols() == 0) throw DimensionError("softmax_rows: no columns in " + x.shape_string());
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      if (std::isnan(v)) throw InvalidValueError("softmax_rows: NaN in row " + std::to_string(i));
      mx = std::max(mx, v);
    }
    if (!std::isfinite(mx)) {
      throw InvalidValueError("softmax_rows: non-finite row " + std::to_string(i));
    }
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

inline Var softmax_rows(Var x) {
  Tensor out = softmax_rows(x.value());
  const std::size_t id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, id](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (gx == nullptr) return;
    const Tensor& p = t.value(Var(&t, id));
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += g(i, j) * p(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) (*gx)(i, j) += p(i, j) * (g(i, j) - dot);
    }
  });
}

enum class Axis { rows, cols };

// Concatenates along `axis`; an empty operand is the identity.
inline Var concat(std::span<const Var> parts, Axis axis) {
  std::vector<Var> kept;
  for (const Var& p : parts) {
    if (!p.value().empty()) kept.push_back(p);
  }
  if (kept.empty()) {
    if (parts.empty()) throw DimensionError("concat: no operands");
    return parts.front();
  }
  if (kept.size() == 1) return kept.front();
  const Tensor& first = kept.front().value();
  std::size_t rows = 0, cols = 0;
  for (const Var& p : kept) {
    detail::require_same_tape("concat", kept.front(), p);
    const Tensor& v = p.value();
    if (axis == Axis::rows) {
      if (v.cols() != first.cols()) {
        throw DimensionError("concat(rows): " + first.shape_string() + " vs " + v.shape_string());
      }
      rows += v.rows();
      cols = v.cols();
    } else {
      if (v.rows() != first.rows()) {
        throw DimensionError("concat(cols): " + first.shape_string() + " vs " + v.shape_string());
      }
      cols += v.cols();
      rows = v.rows();
    }
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : kept) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == Axis::rows) {
          out(offset + i, j) = v(i, j);
        } else {
          out(i, offset + j) = v(i, j);
        }
      }
    offset += axis == Axis::rows ? v.rows() : v.cols();
  }
  return kept.front().tape().record(
      std::move(out), std::span<const Var>(kept), [kept, axis](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const Var& p : kept) {
          const Tensor& v = t.value(p);
          if (Tensor* gp = t.grad_buffer(p)) {
            for (std::size_t i = 0; i < v.rows(); ++i)
              for (std::size_t j = 0; j < v.cols(); ++j)
                (*gp)(i, j) += axis == Axis::rows ? g(offset + i, j) : g(i, offset + j);
          }
          offset += axis == Axis::rows ? v.rows() : v.cols();
        }
      });
}

inline Var concat(Var a, Var b, Axis axis) {
  const Var parts[] = {a, b};
  return concat(std::span<const Var>(parts), axis);
}

// Rows [begin, begin + count) of x.
inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + xv.shape_string());
  }
  const auto first = xv.data().begin() + static_cast<std::ptrdiff_t>(begin * xv.cols());
  Tensor out(count, xv.cols(),
             std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * xv.cols())));
  return x.tape().record(std::move(out), {x}, [x, begin](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (gx == nullptr) return;
    const std::size_t base = begin * gx->cols();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[base + i] += g[i];
  });
}

// Columns [begin, begin + count) of x.
inline Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  if (begin + count > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + xv.shape_string());
  }
  Tensor out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, begin + j);
  return x.tape().record(std::move(out), {x}, [x, begin](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) (*gx)(i, begin + j) += g(i, j);
  });
}

// Sum of all entries, as a 1 x 1 tensor.
inline Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (double& v : gx->data()) v += g[0];
  });
}

inline Var sum_squares(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v * v;
  return x.tape().record(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (gx == nullptr) return;
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += 2.0 * xv[i] * g[0];
  });
}

// Summed cross-entropy of row-wise softmax(logits) against `labels`.
// Rows labelled negative are skipped. Computed through log-sum-exp.
inline Var cross_entropy_sum(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (labels.size() != z.rows()) {
    throw DimensionError("cross_entropy_sum: " + std::to_string(labels.size()) +
                         " labels for logits " + z.shape_string());
  }
  std::vector<int> kept(labels.begin(), labels.end());
  for (int y : kept) {
    if (y >= static_cast<int>(z.cols())) {
      throw DimensionError("cross_entropy_sum: label " + std::to_string(y) + " outside " +
                           std::to_string(z.cols()) + " classes");
    }
  }
  Tensor probs = softmax_rows(z);
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (kept[i] < 0) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < z.cols(); ++j) mx = std::max(mx, z(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) s += std::exp(z(i, j) - mx);
    total += mx + std::log(s) - z(i, static_cast<std::size_t>(kept[i]));
  }
  return logits.tape().record(
      Tensor::scalar(total), {logits},
      [logits, kept = std::move(kept), probs = std::move(probs)](Tape& t, const Tensor& g) {
        Tensor* gz = t.grad_buffer(logits);
        if (gz == nullptr) return;
        for (std::size_t i = 0; i < probs.rows(); ++i) {
          if (kept[i] < 0) continue;
          for (std::size_t j = 0; j < probs.cols(); ++j) {
            const double indicator = static_cast<int>(j) == kept[i] ? 1.0 : 0.0;
            (*gz)(i, j) += g[0] * (probs(i, j) - indicator);
          }
        }
      });
}

struct GrlConfig {
  double lambda = 1.0;
};

// Gradient reversal: identity forward, multiplies the gradient by -lambda
// on the way back.
inline Var grl(Var x, GrlConfig cfg) {
  if (!(cfg.lambda >= 0.0)) {
    throw std::invalid_argument("grl: lambda must be non-negative, got " +
                                std::to_string(cfg.lambda));
  }
  const double factor = -cfg.lambda;
  return x.tape().record(x.value(), {x}, [x, factor](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += factor * g[i];
  });
}

// weight * sum of squared entries over `weights` (bias vectors are not passed).
inline Var l2_penalty(std::span<const Var> weights, double weight) {
  if (!(weight >= 0.0)) {
    throw std::invalid_argument("l2_penalty: weight must be non-negative, got " +
                                std::to_string(weight));
  }
  if (weights.empty()) throw std::invalid_argument("l2_penalty: no parameters");
  Var total = sum_squares(weights.front());
  for (std::size_t i = 1; i < weights.size(); ++i) total = add(total, sum_squares(weights[i]));
  return scale(total, weight);
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// One bias-corrected Adam update of `params` in place.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                      AdamState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: state holds " + std::to_string(state.first_moment.size()) +
                         " slots for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]) || !params[k]->same_shape(state.first_moment[k])) {
      throw DimensionError("adam_step: parameter " + std::to_string(k) + " has shape " +
                           params[k]->shape_string() + ", gradient " + grads[k].shape_string() +
                           ", state " + state.first_moment[k].shape_string());
    }
  }
  state.step += 1;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace dann

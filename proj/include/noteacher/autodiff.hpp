#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Every value on a tape is a (rows x cols) matrix of doubles; scalars are 1x1.
// Nodes are appended in creation order, so the tape order is already a
// topological order and backward() simply walks it in reverse.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "noteacher/error.hpp"

namespace nt {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  friend bool operator==(const Shape&, const Shape&) = default;
  [[nodiscard]] std::size_t size() const { return rows * cols; }
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + ")";
}

/// Dense row-major matrix.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape{rows, cols}, data(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : shape{rows, cols}, data(std::move(values)) {
    if (data.size() != shape.size()) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  [[nodiscard]] std::size_t rows() const { return shape.rows; }
  [[nodiscard]] std::size_t cols() const { return shape.cols; }
  [[nodiscard]] std::size_t size() const { return data.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * shape.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * shape.cols + c]; }

  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return {data.data() + r * shape.cols, shape.cols};
  }
  std::span<double> row(std::size_t r) { return {data.data() + r * shape.cols, shape.cols}; }

  [[nodiscard]] double item() const {
    if (shape.size() != 1) throw ShapeError("item() on non-scalar " + to_string(shape));
    return data[0];
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

class Tape;

/// Lightweight handle to a node on a Tape. Copying a Var does not copy data.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Tensor& grad() const;
  [[nodiscard]] Shape shape() const { return value().shape; }
  [[nodiscard]] double item() const { return value().item(); }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Adjoints = std::vector<Tensor>;

/// Backward rule: receives the adjoint of the node's output and pushes
/// contributions into its parents' adjoints.
using BackwardFn = std::function<void(const Tensor& out_adj, Adjoints& adj)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable input.
  Var leaf(Tensor value) { return push(std::move(value), true, nullptr); }
  /// Input treated as a constant by backward().
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.grad = Tensor(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  [[nodiscard]] const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar root. Gradients accumulate into the stored
  /// grads; call zero_grad() between independent sweeps.
  void backward(const Var& root) {
    if (&root.tape() != this) throw Error("backward: root belongs to another tape");
    const Tensor& rv = value(root.id());
    if (rv.size() != 1) {
      throw ShapeError("backward: root must be scalar, got " + to_string(rv.shape));
    }
    Adjoints adj(root.id() + 1);
    adj[root.id()] = Tensor(1, 1, 1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (adj[i].data.empty()) continue;
      if (n.backward) n.backward(adj[i], adj);
    }
    for (std::size_t i = 0; i < adj.size(); ++i) {
      if (adj[i].data.empty()) continue;
      auto& g = nodes_[i].grad.data;
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += adj[i].data[j];
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

namespace ad {

/// Policy bounds for probabilities that are fed to log().
inline constexpr double kProbMin = 1e-7;
inline constexpr double kProbMax = 1.0 - 1e-7;

namespace detail {

inline void accumulate(Adjoints& adj, std::size_t id, const Tensor& contrib) {
  Tensor& a = adj[id];
  if (a.data.empty()) {
    a = contrib;
    return;
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += contrib.data[i];
}

inline Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands on different tapes");
  return a.tape();
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

inline bool any_grad(std::initializer_list<Var> vs) {
  return std::any_of(vs.begin(), vs.end(),
                     [](const Var& v) { return v.tape().requires_grad(v.id()); });
}

// Element-wise unary op with derivative expressed through input and output.
template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  if (!any_grad({a})) return t.constant(std::move(out));
  const std::size_t ia = a.id();
  Tape* tp = &t;
  auto fn = [tp, ia, dfdx, oid = t.size()](const Tensor& g, Adjoints& adj) {
    const Tensor& xin = tp->value(ia);
    const Tensor& y = tp->value(oid);
    Tensor c(xin.rows(), xin.cols());
    for (std::size_t i = 0; i < xin.size(); ++i) c.data[i] = g.data[i] * dfdx(xin.data[i], y.data[i]);
    accumulate(adj, ia, c);
  };
  return t.push(std::move(out), true, fn);
}

}  // namespace detail

inline Var detach(const Var& a) { return a.tape().constant(a.value()); }

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "add");
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  if (!detail::any_grad({a, b})) return t.constant(std::move(out));
  auto fn = [ia = a.id(), ib = b.id()](const Tensor& g, Adjoints& adj) {
    detail::accumulate(adj, ia, g);
    detail::accumulate(adj, ib, g);
  };
  return t.push(std::move(out), true, fn);
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "sub");
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  if (!detail::any_grad({a, b})) return t.constant(std::move(out));
  auto fn = [ia = a.id(), ib = b.id()](const Tensor& g, Adjoints& adj) {
    detail::accumulate(adj, ia, g);
    Tensor neg = g;
    for (double& v : neg.data) v = -v;
    detail::accumulate(adj, ib, neg);
  };
  return t.push(std::move(out), true, fn);
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "mul");
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  if (!detail::any_grad({a, b})) return t.constant(std::move(out));
  Tape* tp = &t;
  auto fn = [tp, ia = a.id(), ib = b.id()](const Tensor& g, Adjoints& adj) {
    const Tensor& av = tp->value(ia);
    const Tensor& bv = tp->value(ib);
    Tensor ca(g.rows(), g.cols()), cb(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ca.data[i] = g.data[i] * bv.data[i];
      cb.data[i] = g.data[i] * av.data[i];
    }
    detail::accumulate(adj, ia, ca);
    detail::accumulate(adj, ib, cb);
  };
  return t.push(std::move(out), true, fn);
}

inline Var scale(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Natural log. Non-positive inputs raise DomainError; clamp first if the
/// input is a probability.
inline Var log(const Var& a) {
  for (double v : a.value().data) {
    if (!(v > 0.0)) {
      std::ostringstream os;
      os << "log: non-positive input " << v << " in operand " << to_string(a.shape());
      throw DomainError(os.str());
    }
  }
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Clamp into [lo, hi]; the gradient is zero where the bound is active.
inline Var clamp(const Var& a, double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
    throw DomainError("clamp: bounds must be finite with lo <= hi");
  }
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Var clamp_prob(const Var& a) { return clamp(a, kProbMin, kProbMax); }

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(A.shape) + " x " +
                     to_string(B.shape));
  }
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.data[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B.data.data() + p * m;
      double* orow = out.data.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  if (!detail::any_grad({a, b})) return t.constant(std::move(out));
  Tape* tp = &t;
  auto fn = [tp, ia = a.id(), ib = b.id(), n, k, m](const Tensor& g, Adjoints& adj) {
    const Tensor& Av = tp->value(ia);
    const Tensor& Bv = tp->value(ib);
    if (tp->requires_grad(ia)) {
      // dA = G * B^T
      Tensor da(n, k);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g.data[i * m + j] * Bv.data[p * m + j];
          da.data[i * k + p] = s;
        }
      }
      detail::accumulate(adj, ia, da);
    }
    if (tp->requires_grad(ib)) {
      // dB = A^T * G
      Tensor db(k, m);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av.data[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) db.data[p * m + j] += aip * g.data[i * m + j];
        }
      }
      detail::accumulate(adj, ib, db);
    }
  };
  return t.push(std::move(out), true, fn);
}

/// a (n x m) plus a row vector b (1 x m) added to every row.
inline Var add_row(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b, "add_row");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (B.rows() != 1 || B.cols() != A.cols()) {
    throw ShapeError("add_row: expected (1x" + std::to_string(A.cols()) + ") row, got " +
                     to_string(B.shape));
  }
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += B.data[j];
  if (!detail::any_grad({a, b})) return t.constant(std::move(out));
  auto fn = [ia = a.id(), ib = b.id()](const Tensor& g, Adjoints& adj) {
    detail::accumulate(adj, ia, g);
    Tensor db(1, g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) db.data[j] += g(i, j);
    detail::accumulate(adj, ib, db);
  };
  return t.push(std::move(out), true, fn);
}

/// a (n x m) plus a column vector c (n x 1) added to every column.
inline Var add_col(const Var& a, const Var& c) {
  Tape& t = detail::same_tape(a, c, "add_col");
  const Tensor& A = a.value();
  const Tensor& C = c.value();
  if (C.cols() != 1 || C.rows() != A.rows()) {
    throw ShapeError("add_col: expected (" + std::to_string(A.rows()) + "x1) column, got " +
                     to_string(C.shape));
  }
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += C.data[i];
  if (!detail::any_grad({a, c})) return t.constant(std::move(out));
  auto fn = [ia = a.id(), ic = c.id()](const Tensor& g, Adjoints& adj) {
    detail::accumulate(adj, ia, g);
    Tensor dc(g.rows(), 1);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) dc.data[i] += g(i, j);
    detail::accumulate(adj, ic, dc);
  };
  return t.push(std::move(out), true, fn);
}

inline Var sum(const Var& a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value().data) s += v;
  if (!detail::any_grad({a})) return t.constant(Tensor::scalar(s));
  auto fn = [ia = a.id(), shape = a.shape()](const Tensor& g, Adjoints& adj) {
    detail::accumulate(adj, ia, Tensor(shape.rows, shape.cols, g.data[0]));
  };
  return t.push(Tensor::scalar(s), true, fn);
}

inline Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Row-wise sum over the class axis: (n x m) -> (n x 1).
inline Var row_sum(const Var& a) {
  Tape& t = a.tape();
  const Tensor& A = a.value();
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out.data[i] += A(i, j);
  if (!detail::any_grad({a})) return t.constant(std::move(out));
  auto fn = [ia = a.id(), shape = A.shape](const Tensor& g, Adjoints& adj) {
    Tensor d(shape.rows, shape.cols);
    for (std::size_t i = 0; i < shape.rows; ++i)
      for (std::size_t j = 0; j < shape.cols; ++j) d(i, j) = g.data[i];
    detail::accumulate(adj, ia, d);
  };
  return t.push(std::move(out), true, fn);
}

/// Stable log-sum-exp over the class axis: (n x m) -> (n x 1).
/// Entries equal to -inf are allowed and contribute zero mass.
inline Var logsumexp_rows(const Var& a) {
  Tape& t = a.tape();
  const Tensor& A = a.value();
  if (A.cols() == 0) throw ShapeError("logsumexp_rows: no columns");
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const auto r = A.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    if (mx == -std::numeric_limits<double>::infinity()) {
      out.data[i] = mx;
      continue;
    }
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    out.data[i] = mx + std::log(s);
  }
  if (!detail::any_grad({a})) return t.constant(std::move(out));
  Tape* tp = &t;
  auto fn = [tp, ia = a.id(), oid = t.size()](const Tensor& g, Adjoints& adj) {
    const Tensor& Av = tp->value(ia);
    const Tensor& L = tp->value(oid);
    Tensor d(Av.rows(), Av.cols());
    for (std::size_t i = 0; i < Av.rows(); ++i)
      for (std::size_t j = 0; j < Av.cols(); ++j) {
        const double w = std::isfinite(L.data[i]) ? std::exp(Av(i, j) - L.data[i]) : 0.0;
        d(i, j) = g.data[i] * w;
      }
    detail::accumulate(adj, ia, d);
  };
  return t.push(std::move(out), true, fn);
}

/// Row-wise softmax: exp(a - logsumexp(a)).
inline Var softmax_rows(const Var& a) {
  Tape& t = a.tape();
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const auto r = A.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) s += (out(i, j) = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) /= s;
  }
  if (!detail::any_grad({a})) return t.constant(std::move(out));
  Tape* tp = &t;
  auto fn = [tp, ia = a.id(), oid = t.size()](const Tensor& g, Adjoints& adj) {
    const Tensor& S = tp->value(oid);
    Tensor d(S.rows(), S.cols());
    for (std::size_t i = 0; i < S.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < S.cols(); ++j) dot += g(i, j) * S(i, j);
      for (std::size_t j = 0; j < S.cols(); ++j) d(i, j) = S(i, j) * (g(i, j) - dot);
    }
    detail::accumulate(adj, ia, d);
  };
  return t.push(std::move(out), true, fn);
}

/// Selects rows by index (duplicates allowed).
inline Var gather_rows(const Var& a, std::span<const std::size_t> idx) {
  Tape& t = a.tape();
  const Tensor& A = a.value();
  Tensor out(idx.size(), A.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= A.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                       to_string(A.shape));
    }
    std::copy(A.row(idx[r]).begin(), A.row(idx[r]).end(), out.row(r).begin());
  }
  if (!detail::any_grad({a})) return t.constant(std::move(out));
  auto fn = [ia = a.id(), shape = A.shape, rows = std::vector<std::size_t>(idx.begin(), idx.end())](
                const Tensor& g, Adjoints& adj) {
    Tensor d(shape.rows, shape.cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < shape.cols; ++j) d(rows[r], j) += g(r, j);
    detail::accumulate(adj, ia, d);
  };
  return t.push(std::move(out), true, fn);
}

/// Stacks operands with equal column count vertically.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = parts[0].tape();
  const std::size_t cols = parts[0].shape().cols;
  std::size_t rows = 0;
  bool grad = false;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw Error("concat_rows: operands on different tapes");
    if (p.shape().cols != cols) {
      throw ShapeError("concat_rows: column mismatch " + to_string(parts[0].shape()) + " vs " +
                       to_string(p.shape()));
    }
    rows += p.shape().rows;
    grad = grad || t.requires_grad(p.id());
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + off * cols);
    off += p.shape().rows;
    ids.push_back(p.id());
  }
  if (!grad) return t.constant(std::move(out));
  Tape* tp = &t;
  auto fn = [tp, ids, cols](const Tensor& g, Adjoints& adj) {
    std::size_t o = 0;
    for (std::size_t id : ids) {
      const std::size_t r = tp->value(id).rows();
      Tensor d(r, cols);
      std::copy(g.data.begin() + o * cols, g.data.begin() + (o + r) * cols, d.data.begin());
      detail::accumulate(adj, id, d);
      o += r;
    }
  };
  return t.push(std::move(out), true, fn);
}

/// Column-wise max over consecutive row segments. `offsets` has one entry per
/// segment start plus a final end marker. Ties go to the lowest row index and
/// the gradient flows only through the winning row of each column.
inline Var segment_max(const Var& a, std::span<const std::size_t> offsets) {
  Tape& t = a.tape();
  const Tensor& A = a.value();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != A.rows()) {
    throw ShapeError("segment_max: offsets must run from 0 to " + std::to_string(A.rows()));
  }
  const std::size_t nseg = offsets.size() - 1;
  const std::size_t m = A.cols();
  Tensor out(nseg, m);
  std::vector<std::size_t> arg(nseg * m);
  for (std::size_t s = 0; s < nseg; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ShapeError("segment_max: empty segment");
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t best = offsets[s];
      for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r)
        if (A(r, j) > A(best, j)) best = r;
      out(s, j) = A(best, j);
      arg[s * m + j] = best;
    }
  }
  if (!detail::any_grad({a})) return t.constant(std::move(out));
  auto fn = [ia = a.id(), shape = A.shape, arg = std::move(arg), m](const Tensor& g,
                                                                     Adjoints& adj) {
    Tensor d(shape.rows, shape.cols);
    for (std::size_t s = 0; s < g.rows(); ++s)
      for (std::size_t j = 0; j < m; ++j) d(arg[s * m + j], j) += g(s, j);
    detail::accumulate(adj, ia, d);
  };
  return t.push(std::move(out), true, fn);
}

}  // namespace ad

inline Var operator+(const Var& a, const Var& b) { return ad::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ad::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ad::mul(a, b); }
inline Var operator*(double s, const Var& a) { return ad::scale(a, s); }
inline Var operator*(const Var& a, double s) { return ad::scale(a, s); }

}  // namespace nt

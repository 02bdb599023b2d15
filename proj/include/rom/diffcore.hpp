#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Graph records every operation in insertion order. Insertion order is a
// valid topological order, so backward() is a single reverse sweep. Graphs
// are built once per forward pass and discarded afterwards.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rom {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
using Tensor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
std::string shape_of(const Tensor<T>& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return t.allFinite();
}

/// Glorot-uniform initialization, a = sqrt(6 / (fan_in + fan_out)).
template <class T, class Rng>
Tensor<T> glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<T> w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
  return w;
}

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op {
  leaf,
  matmul,
  add,
  mul,
  scale,
  relu,
  row_softmax,
  concat_cols,
  concat_rows,
  slice_cols,
  slice_rows,
  exp,
  log,
  sum_all,
  sum_rows,
  transpose,
  logsumexp_rows,
  gather_rows,
};

template <class T>
class Graph {
 public:
  using Matrix = Tensor<T>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // Leaves ----------------------------------------------------------------

  NodeId constant(Matrix value) {
    check_finite(value, "constant");
    Node n;
    n.op = Op::leaf;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  /// Leaf that borrows `value`. The same tensor object maps to the same node,
  /// so a parameter used in several places accumulates one gradient.
  NodeId parameter(const Matrix& value) {
    if (auto it = bound_.find(&value); it != bound_.end()) return it->second;
    Node n;
    n.op = Op::leaf;
    n.borrowed = &value;
    NodeId id = push(std::move(n));
    bound_.emplace(&value, id);
    return id;
  }

  /// Redirects later parameter(value) lookups to an existing node.
  void bind(const Matrix& value, NodeId node) { bound_[&value] = node; }

  /// Node bound to `value`, if the forward pass used it.
  [[nodiscard]] const NodeId* find(const Matrix& value) const {
    auto it = bound_.find(&value);
    return it == bound_.end() ? nullptr : &it->second;
  }

  // Primitives ------------------------------------------------------------

  NodeId matmul(NodeId a, NodeId b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (x.cols() != y.rows()) mismatch("matmul", x, y);
    return push_op(Op::matmul, {a, b}, (x * y).eval());
  }

  /// Elementwise sum. `b` may also be 1xC (added to every row), Rx1 (added
  /// to every column) or 1x1.
  NodeId add(NodeId a, NodeId b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    check_broadcast("add", x, y);
    Matrix out = x;
    broadcast_add(out, y);
    return push_op(Op::add, {a, b}, std::move(out));
  }

  /// Elementwise product with the same broadcasting rules as add().
  NodeId mul(NodeId a, NodeId b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    check_broadcast("mul", x, y);
    Matrix out = x;
    broadcast_mul(out, y);
    return push_op(Op::mul, {a, b}, std::move(out));
  }

  NodeId scale(NodeId a, T factor) {
    NodeId id = push_op(Op::scale, {a}, (value(a) * factor).eval());
    nodes_[id.index].scalar = factor;
    return id;
  }

  NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, T(-1))); }

  NodeId relu(NodeId a) { return push_op(Op::relu, {a}, value(a).cwiseMax(T(0)).eval()); }

  NodeId row_softmax(NodeId a) {
    const Matrix& x = value(a);
    if (x.cols() == 0) throw Error("row_softmax of a tensor with zero columns");
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T m = x.row(r).maxCoeff();
      out.row(r) = (x.row(r).array() - m).exp();
      out.row(r) /= out.row(r).sum();
    }
    return push_op(Op::row_softmax, {a}, std::move(out));
  }

  NodeId concat_cols(NodeId a, NodeId b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (x.rows() != y.rows()) mismatch("concat_cols", x, y);
    Matrix out(x.rows(), x.cols() + y.cols());
    out << x, y;
    return push_op(Op::concat_cols, {a, b}, std::move(out));
  }

  NodeId concat_rows(NodeId a, NodeId b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (x.cols() != y.cols()) mismatch("concat_rows", x, y);
    Matrix out(x.rows() + y.rows(), x.cols());
    out << x, y;
    return push_op(Op::concat_rows, {a, b}, std::move(out));
  }

  NodeId slice_cols(NodeId a, Eigen::Index begin, Eigen::Index count) {
    const Matrix& x = value(a);
    if (begin < 0 || count < 0 || begin + count > x.cols()) {
      throw Error("slice_cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                  ") out of range for " + shape_of(x));
    }
    NodeId id = push_op(Op::slice_cols, {a}, x.middleCols(begin, count).eval());
    nodes_[id.index].offset = begin;
    return id;
  }

  NodeId slice_rows(NodeId a, Eigen::Index begin, Eigen::Index count) {
    const Matrix& x = value(a);
    if (begin < 0 || count < 0 || begin + count > x.rows()) {
      throw Error("slice_rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                  ") out of range for " + shape_of(x));
    }
    NodeId id = push_op(Op::slice_rows, {a}, x.middleRows(begin, count).eval());
    nodes_[id.index].offset = begin;
    return id;
  }

  NodeId exp(NodeId a) { return push_op(Op::exp, {a}, value(a).array().exp().matrix().eval()); }

  NodeId log(NodeId a) {
    const Matrix& x = value(a);
    if (x.size() > 0 && x.minCoeff() <= T(0)) {
      throw Error("log of non-positive entry (min " + std::to_string(double(x.minCoeff())) + ")");
    }
    return push_op(Op::log, {a}, x.array().log().matrix().eval());
  }

  NodeId sum_all(NodeId a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    return push_op(Op::sum_all, {a}, std::move(out));
  }

  /// Per-row sums, Rx1.
  NodeId sum_rows(NodeId a) { return push_op(Op::sum_rows, {a}, value(a).rowwise().sum().eval()); }

  NodeId transpose(NodeId a) { return push_op(Op::transpose, {a}, value(a).transpose().eval()); }

  /// Stable per-row log(sum(exp(x))), Rx1.
  NodeId logsumexp_rows(NodeId a) {
    const Matrix& x = value(a);
    if (x.cols() == 0) throw Error("logsumexp_rows of a tensor with zero columns");
    Matrix out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T m = x.row(r).maxCoeff();
      out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
    }
    return push_op(Op::logsumexp_rows, {a}, std::move(out));
  }

  NodeId gather_rows(NodeId a, std::vector<Eigen::Index> rows) {
    const Matrix& x = value(a);
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] < 0 || rows[k] >= x.rows()) {
        throw Error("gather_rows index " + std::to_string(rows[k]) + " out of range for " + shape_of(x));
      }
      out.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
    }
    NodeId id = push_op(Op::gather_rows, {a}, std::move(out));
    nodes_[id.index].indices = std::move(rows);
    return id;
  }

  // Access ----------------------------------------------------------------

  [[nodiscard]] const Matrix& value(NodeId id) const {
    const Node& n = at(id);
    return n.borrowed ? *n.borrowed : n.owned;
  }

  /// Gradient of `id`, or nullptr when no path reaches it.
  [[nodiscard]] const Matrix* grad_if(NodeId id) const {
    const Node& n = at(id);
    return n.grad.size() == 0 ? nullptr : &n.grad;
  }

  /// Gradient of the last backward() loss; zeros if the node is unreachable.
  [[nodiscard]] Matrix grad(NodeId id) const {
    const Node& n = at(id);
    if (n.grad.size() == 0) return Matrix::Zero(value(id).rows(), value(id).cols());
    return n.grad;
  }

  [[nodiscard]] Op op(NodeId id) const { return at(id).op; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Backward --------------------------------------------------------------

  void backward(NodeId loss) {
    if (value(loss).rows() != 1 || value(loss).cols() != 1) {
      throw Error("backward requires a scalar loss, got " + shape_of(value(loss)));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.index].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || n.op == Op::leaf) continue;
      propagate(n);
    }
  }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<NodeId> inputs;
    Matrix owned;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    T scalar = T(0);
    Eigen::Index offset = 0;
    std::vector<Eigen::Index> indices;
  };

  const Node& at(NodeId id) const {
    if (id.index >= nodes_.size()) throw Error("unknown node " + std::to_string(id.index));
    return nodes_[id.index];
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  NodeId push_op(Op op, std::vector<NodeId> inputs, Matrix out) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.owned = std::move(out);
    return push(std::move(n));
  }

  static void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw Error(std::string(what) + ": non-finite entry");
  }

  [[noreturn]] static void mismatch(const char* what, const Matrix& a, const Matrix& b) {
    throw Error(std::string("shape mismatch in ") + what + ": " + shape_of(a) + " vs " + shape_of(b));
  }

  static void check_broadcast(const char* what, const Matrix& a, const Matrix& b) {
    const bool same = a.rows() == b.rows() && a.cols() == b.cols();
    const bool row = b.rows() == 1 && b.cols() == a.cols();
    const bool col = b.cols() == 1 && b.rows() == a.rows();
    const bool scalar = b.rows() == 1 && b.cols() == 1;
    if (!(same || row || col || scalar)) mismatch(what, a, b);
  }

  static void broadcast_add(Matrix& out, const Matrix& b) {
    if (b.rows() == out.rows() && b.cols() == out.cols()) {
      out += b;
    } else if (b.size() == 1) {
      out.array() += b(0, 0);
    } else if (b.rows() == 1) {
      out.rowwise() += b.row(0);
    } else {
      out.colwise() += b.col(0);
    }
  }

  static void broadcast_mul(Matrix& out, const Matrix& b) {
    if (b.rows() == out.rows() && b.cols() == out.cols()) {
      out.array() *= b.array();
    } else if (b.size() == 1) {
      out *= b(0, 0);
    } else if (b.rows() == 1) {
      out.array().rowwise() *= b.row(0).array();
    } else {
      out.array().colwise() *= b.col(0).array();
    }
  }

  /// Sums a full-shape gradient down to the (possibly broadcast) shape of b.
  static Matrix reduce_to(const Matrix& g, const Matrix& b) {
    if (g.rows() == b.rows() && g.cols() == b.cols()) return g;
    if (b.rows() == 1 && b.cols() == 1) {
      Matrix s(1, 1);
      s(0, 0) = g.sum();
      return s;
    }
    if (b.rows() == 1) return g.colwise().sum();
    return g.rowwise().sum();
  }

  template <class E>
  void accumulate(NodeId id, const Eigen::MatrixBase<E>& g) {
    Node& n = nodes_[id.index];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad.noalias() += g;
    }
  }

  /// Gradient buffer of `id`, zero-filled on first use.
  Matrix& grad_buffer(NodeId id) {
    Node& n = nodes_[id.index];
    if (n.grad.size() == 0) {
      const Matrix& a = value(id);
      n.grad.setZero(a.rows(), a.cols());
    }
    return n.grad;
  }

  void propagate(const Node& n) {
    const Matrix& g = n.grad;
    const Matrix& out = n.owned;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul:
        accumulate(n.inputs[0], Matrix(g * value(n.inputs[1]).transpose()));
        accumulate(n.inputs[1], Matrix(value(n.inputs[0]).transpose() * g));
        break;
      case Op::add:
        accumulate(n.inputs[0], g);
        if (g.rows() == value(n.inputs[1]).rows() && g.cols() == value(n.inputs[1]).cols()) {
          accumulate(n.inputs[1], g);
        } else {
          accumulate(n.inputs[1], reduce_to(g, value(n.inputs[1])));
        }
        break;
      case Op::mul: {
        const Matrix& a = value(n.inputs[0]);
        const Matrix& b = value(n.inputs[1]);
        Matrix ga = g;
        broadcast_mul(ga, b);
        accumulate(n.inputs[0], ga);
        if (b.rows() == a.rows() && b.cols() == a.cols()) {
          accumulate(n.inputs[1], g.cwiseProduct(a));
        } else {
          accumulate(n.inputs[1], reduce_to(g.cwiseProduct(a), b));
        }
        break;
      }
      case Op::scale:
        accumulate(n.inputs[0], g * n.scalar);
        break;
      case Op::relu:
        accumulate(n.inputs[0], (out.array() > T(0)).select(g, T(0)).matrix());
        break;
      case Op::row_softmax: {
        Matrix dot = g.cwiseProduct(out).rowwise().sum();
        accumulate(n.inputs[0], out.cwiseProduct(g - dot.replicate(1, g.cols())));
        break;
      }
      case Op::concat_cols: {
        const Eigen::Index left = value(n.inputs[0]).cols();
        accumulate(n.inputs[0], g.leftCols(left));
        accumulate(n.inputs[1], g.rightCols(g.cols() - left));
        break;
      }
      case Op::concat_rows: {
        const Eigen::Index top = value(n.inputs[0]).rows();
        accumulate(n.inputs[0], g.topRows(top));
        accumulate(n.inputs[1], g.bottomRows(g.rows() - top));
        break;
      }
      case Op::slice_cols: {
        grad_buffer(n.inputs[0]).middleCols(n.offset, g.cols()) += g;
        break;
      }
      case Op::slice_rows: {
        grad_buffer(n.inputs[0]).middleRows(n.offset, g.rows()) += g;
        break;
      }
      case Op::exp:
        accumulate(n.inputs[0], g.cwiseProduct(out));
        break;
      case Op::log:
        accumulate(n.inputs[0], g.cwiseQuotient(value(n.inputs[0])));
        break;
      case Op::sum_all: {
        const Matrix& a = value(n.inputs[0]);
        accumulate(n.inputs[0], Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      }
      case Op::sum_rows: {
        const Matrix& a = value(n.inputs[0]);
        accumulate(n.inputs[0], g.replicate(1, a.cols()));
        break;
      }
      case Op::transpose:
        accumulate(n.inputs[0], g.transpose());
        break;
      case Op::logsumexp_rows: {
        const Matrix& a = value(n.inputs[0]);
        Matrix ga(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          ga.row(r) = (a.row(r).array() - out(r, 0)).exp() * g(r, 0);
        }
        accumulate(n.inputs[0], ga);
        break;
      }
      case Op::gather_rows: {
        Matrix& ga = grad_buffer(n.inputs[0]);
        for (std::size_t k = 0; k < n.indices.size(); ++k) {
          ga.row(n.indices[k]) += g.row(static_cast<Eigen::Index>(k));
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, NodeId> bound_;
};

/// Builds a scalar from a leaf holding the evaluation point.
using ScalarBuilder = std::function<NodeId(Graph<double>&, NodeId)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double gradient_check(const ScalarBuilder& build, const Tensor<double>& point, double step) {
  if (!(step > 0.0)) throw Error("gradient_check step must be positive");
  Tensor<double> analytic;
  {
    Graph<double> g;
    NodeId x = g.constant(point);
    NodeId loss = build(g, x);
    g.backward(loss);
    analytic = g.grad(x);
  }
  auto eval_at = [&](const Tensor<double>& p) {
    Graph<double> g;
    NodeId x = g.constant(p);
    NodeId loss = build(g, x);
    return g.value(loss)(0, 0);
  };
  double worst = 0.0;
  Tensor<double> probe = point;
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + step;
    const double up = eval_at(probe);
    probe.data()[i] = saved - step;
    const double down = eval_at(probe);
    probe.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

}  // namespace rom

#pragma once

// Tensor-level reverse-mode differentiation over dense affine layers and
// elementwise nonlinearities. A Tape records one batched evaluation; backward()
// returns gradients for every named leaf and leaves the tape untouched.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "difftrace/error.hpp"

namespace difftrace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> values_)
      : shape(std::move(shape_)), values(std::move(values_)) {
    if (element_count(shape) != values.size()) {
      throw ConfigError("tensor shape does not match value count");
    }
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  static Tensor zeros(std::vector<std::size_t> s) {
    const std::size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  ConstMatrixMap as_matrix() const {
    return ConstMatrixMap(values.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }
  MatrixMap as_matrix() {
    return MatrixMap(values.data(), static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

using NodeId = std::size_t;

enum class OpKind {
  leaf,
  affine,
  relu,
  tanh,
  sigmoid,
  add,
  mul,
  scale,
  sum,
  reshape,
  concat_cols,
  broadcast_rows,
  rowwise_linear,
};

/// y = x with the ReLU subgradient fixed to 0 at x == 0.
inline double relu_value(double x) { return x > 0.0 ? x : 0.0; }
inline double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

class Tape {
 public:
  struct Node {
    OpKind op = OpKind::leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    // op-specific saved data: jacobian rows for rowwise_linear, factor for scale
    Tensor saved;
    double factor = 0.0;
  };

  /// Registers a leaf. Named leaves receive gradients from backward(); an empty
  /// name makes a constant.
  NodeId leaf(const std::string& name, Tensor value) {
    check_finite(value, "leaf");
    const NodeId id = push(Node{OpKind::leaf, {}, std::move(value), {}, 0.0});
    if (!name.empty()) {
      if (leaves_.count(name) != 0) throw ConfigError("duplicate tape leaf '" + name + "'");
      leaves_[name] = id;
    }
    return id;
  }
  NodeId constant(Tensor value) { return leaf("", std::move(value)); }

  const Tensor& value(NodeId id) const { return at(id).value; }
  std::size_t size() const { return nodes_.size(); }
  const std::map<std::string, NodeId>& leaves() const { return leaves_; }
  bool has_leaf(const std::string& name) const { return leaves_.count(name) != 0; }
  NodeId leaf_id(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw ConfigError("unknown tape leaf '" + name + "'");
    return it->second;
  }

  /// Gradient of sum(seed * output) for every named leaf.
  std::map<std::string, Tensor> backward(NodeId output, const Tensor& seed) const;

  // Internal: used by the op functions below.
  NodeId push(Node node) {
    for (NodeId in : node.inputs) {
      if (in >= nodes_.size()) throw ConfigError("tape input refers to a later node");
    }
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }
  const Node& at(NodeId id) const {
    if (id >= nodes_.size()) throw ConfigError("node is not on this tape (detached output)");
    return nodes_[id];
  }

  static void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaves_;
};

// --- forward kernels shared by the taped and untaped paths -------------------

/// out = x * W + b for row-major x [n, in], W [in, out], b [out].
/// Row-by-row so each output row depends only on its input row, never on how many
/// rows share the batch (a GEMM may pick a different kernel per batch size).
inline void affine_kernel(ConstMatrixMap x, ConstMatrixMap w, std::span<const double> b, MatrixMap out) {
  const Eigen::Map<const Eigen::RowVectorXd> bias(b.data(), static_cast<Eigen::Index>(b.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto row = out.row(i);
    row = bias;
    for (Eigen::Index k = 0; k < x.cols(); ++k) row += x(i, k) * w.row(k);
  }
}

// --- ops -----------------------------------------------------------------------

inline NodeId affine(Tape& tape, NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const Tensor& bv = tape.value(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.cols() != wv.rows() ||
      wv.cols() != bv.size()) {
    throw ConfigError("affine: shape mismatch");
  }
  Tensor out = Tensor::zeros({xv.rows(), wv.cols()});
  affine_kernel(xv.as_matrix(), wv.as_matrix(), bv.values, out.as_matrix());
  Tape::check_finite(out, "affine");
  return tape.push({OpKind::affine, {x, w, b}, std::move(out), {}, 0.0});
}

namespace detail {
template <class Fn>
NodeId unary(Tape& tape, NodeId x, OpKind op, const char* name, Fn fn) {
  Tensor out = tape.value(x);
  for (double& v : out.values) v = fn(v);
  Tape::check_finite(out, name);
  return tape.push({op, {x}, std::move(out), {}, 0.0});
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) throw ConfigError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

inline NodeId relu(Tape& tape, NodeId x) {
  return detail::unary(tape, x, OpKind::relu, "relu", relu_value);
}
inline NodeId tanh(Tape& tape, NodeId x) {
  return detail::unary(tape, x, OpKind::tanh, "tanh", [](double v) { return std::tanh(v); });
}
inline NodeId sigmoid(Tape& tape, NodeId x) {
  return detail::unary(tape, x, OpKind::sigmoid, "sigmoid", sigmoid_value);
}

inline NodeId add(Tape& tape, NodeId a, NodeId b) {
  detail::require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tape::check_finite(out, "add");
  return tape.push({OpKind::add, {a, b}, std::move(out), {}, 0.0});
}

inline NodeId mul(Tape& tape, NodeId a, NodeId b) {
  detail::require_same_shape(tape.value(a), tape.value(b), "mul");
  Tensor out = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape::check_finite(out, "mul");
  return tape.push({OpKind::mul, {a, b}, std::move(out), {}, 0.0});
}

inline NodeId scale(Tape& tape, NodeId x, double factor) {
  Tensor out = tape.value(x);
  for (double& v : out.values) v *= factor;
  Tape::check_finite(out, "scale");
  return tape.push({OpKind::scale, {x}, std::move(out), {}, factor});
}

inline NodeId sum(Tape& tape, NodeId x) {
  const Tensor& xv = tape.value(x);
  Tensor out = Tensor::scalar(std::accumulate(xv.values.begin(), xv.values.end(), 0.0));
  Tape::check_finite(out, "sum");
  return tape.push({OpKind::sum, {x}, std::move(out), {}, 0.0});
}

inline NodeId reshape(Tape& tape, NodeId x, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape), tape.value(x).values);
  return tape.push({OpKind::reshape, {x}, std::move(out), {}, 0.0});
}

inline NodeId concat_cols(Tape& tape, NodeId a, NodeId b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows()) {
    throw ConfigError("concat_cols: shape mismatch");
  }
  const std::size_t n = av.rows(), p = av.cols(), q = bv.cols();
  Tensor out = Tensor::zeros({n, p + q});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(av.values.begin() + r * p, p, out.values.begin() + r * (p + q));
    std::copy_n(bv.values.begin() + r * q, q, out.values.begin() + r * (p + q) + p);
  }
  return tape.push({OpKind::concat_cols, {a, b}, std::move(out), {}, 0.0});
}

/// [d] -> [rows, d], repeating the vector on every row.
inline NodeId broadcast_rows(Tape& tape, NodeId v, std::size_t rows) {
  const Tensor& vv = tape.value(v);
  if (vv.rank() != 1) throw ConfigError("broadcast_rows: expects a vector");
  const std::size_t d = vv.size();
  Tensor out = Tensor::zeros({rows, d});
  for (std::size_t r = 0; r < rows; ++r) std::copy(vv.values.begin(), vv.values.end(), out.values.begin() + r * d);
  return tape.push({OpKind::broadcast_rows, {v}, std::move(out), {}, 0.0});
}

/// Records y_i = g(x_i) for a row-wise function whose value and per-row
/// jacobian (dy_i / dx_i) were computed elsewhere, e.g. an analytic field.
inline NodeId rowwise_linear(Tape& tape, NodeId x, std::vector<double> values, Tensor jacobian) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 2 || jacobian.shape != xv.shape || values.size() != xv.rows()) {
    throw ConfigError("rowwise_linear: shape mismatch");
  }
  Tensor out = Tensor::vector(std::move(values));
  Tape::check_finite(out, "rowwise_linear");
  return tape.push({OpKind::rowwise_linear, {x}, std::move(out), std::move(jacobian), 0.0});
}

// --- backward ------------------------------------------------------------------

inline std::map<std::string, Tensor> Tape::backward(NodeId output, const Tensor& seed) const {
  const Node& out_node = at(output);
  if (seed.values.size() != out_node.value.size()) throw ConfigError("backward: seed shape mismatch");

  std::vector<Tensor> grads(output + 1);
  std::vector<bool> touched(output + 1, false);
  auto accumulate = [&](NodeId id, const Tensor& g) {
    if (!touched[id]) {
      grads[id] = Tensor::zeros(nodes_[id].value.shape);
      touched[id] = true;
    }
    auto& dst = grads[id].values;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.values[i];
  };
  accumulate(output, Tensor(out_node.value.shape, seed.values));

  for (NodeId id = output + 1; id-- > 0;) {
    if (!touched[id]) continue;
    const Node& node = nodes_[id];
    const Tensor& g = grads[id];
    switch (node.op) {
      case OpKind::leaf:
        break;
      case OpKind::affine: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        const Tensor& w = nodes_[node.inputs[1]].value;
        const ConstMatrixMap gy = g.as_matrix();
        Tensor gx = Tensor::zeros(x.shape);
        gx.as_matrix().noalias() = gy * w.as_matrix().transpose();
        Tensor gw = Tensor::zeros(w.shape);
        gw.as_matrix().noalias() = x.as_matrix().transpose() * gy;
        Tensor gb = Tensor::zeros({w.cols()});
        Eigen::Map<Eigen::RowVectorXd>(gb.values.data(), static_cast<Eigen::Index>(gb.size())) =
            gy.colwise().sum();
        accumulate(node.inputs[0], gx);
        accumulate(node.inputs[1], gw);
        accumulate(node.inputs[2], gb);
        break;
      }
      case OpKind::relu: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > 0.0 ? gx[i] : 0.0;
        accumulate(node.inputs[0], gx);
        break;
      }
      case OpKind::tanh: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - node.value[i] * node.value[i];
        accumulate(node.inputs[0], gx);
        break;
      }
      case OpKind::sigmoid: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= node.value[i] * (1.0 - node.value[i]);
        accumulate(node.inputs[0], gx);
        break;
      }
      case OpKind::add:
        accumulate(node.inputs[0], g);
        accumulate(node.inputs[1], g);
        break;
      case OpKind::mul: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        const Tensor& b = nodes_[node.inputs[1]].value;
        Tensor ga = g, gb = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] *= b[i];
          gb[i] *= a[i];
        }
        accumulate(node.inputs[0], ga);
        accumulate(node.inputs[1], gb);
        break;
      }
      case OpKind::scale: {
        Tensor gx = g;
        for (double& v : gx.values) v *= node.factor;
        accumulate(node.inputs[0], gx);
        break;
      }
      case OpKind::sum: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        accumulate(node.inputs[0], Tensor(x.shape, std::vector<double>(x.size(), g[0])));
        break;
      }
      case OpKind::reshape:
        accumulate(node.inputs[0], Tensor(nodes_[node.inputs[0]].value.shape, g.values));
        break;
      case OpKind::concat_cols: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        const Tensor& b = nodes_[node.inputs[1]].value;
        const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
        Tensor ga = Tensor::zeros(a.shape), gb = Tensor::zeros(b.shape);
        for (std::size_t r = 0; r < n; ++r) {
          std::copy_n(g.values.begin() + r * (p + q), p, ga.values.begin() + r * p);
          std::copy_n(g.values.begin() + r * (p + q) + p, q, gb.values.begin() + r * q);
        }
        accumulate(node.inputs[0], ga);
        accumulate(node.inputs[1], gb);
        break;
      }
      case OpKind::broadcast_rows: {
        const Tensor& v = nodes_[node.inputs[0]].value;
        const std::size_t d = v.size();
        Tensor gv = Tensor::zeros(v.shape);
        for (std::size_t r = 0; r < node.value.rows(); ++r) {
          for (std::size_t c = 0; c < d; ++c) gv[c] += g[r * d + c];
        }
        accumulate(node.inputs[0], gv);
        break;
      }
      case OpKind::rowwise_linear: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        const std::size_t cols = x.cols();
        Tensor gx = Tensor::zeros(x.shape);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] = g[r] * node.saved[r * cols + c];
        }
        accumulate(node.inputs[0], gx);
        break;
      }
    }
  }

  std::map<std::string, Tensor> result;
  for (const auto& [name, id] : leaves_) {
    result[name] = (id <= output && touched[id]) ? grads[id] : Tensor::zeros(nodes_[id].value.shape);
  }
  return result;
}

/// Central differences: (fn(x + h e_i) - fn(x - h e_i)) / 2h for every coordinate.
template <class Fn>
std::vector<double> finite_diff(Fn&& fn, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = fn(std::span<const double>(probe));
    probe[i] = orig - h;
    const double down = fn(std::span<const double>(probe));
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace difftrace

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <random>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "difftrace/diffmath.hpp"
#include "difftrace/mlp.hpp"

namespace difftrace {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Shape code z conditioning a neural field. Analytic fields take an empty code.
struct LatentCode {
  std::vector<double> values;

  LatentCode() = default;
  explicit LatentCode(std::vector<double> v) : values(std::move(v)) {}
  static LatentCode zeros(std::size_t dim) { return LatentCode(std::vector<double>(dim, 0.0)); }

  std::size_t size() const { return values.size(); }
  std::span<const double> span() const { return values; }
  operator std::span<const double>() const { return values; }
  bool operator==(const LatentCode&) const = default;
};

/// One taped batched field evaluation. output is a [n] node; leaves are
/// "points" [n, 3], "code" [D] and the network weights (neural fields only).
struct TapedEval {
  Tape tape;
  NodeId output = 0;

  const Tensor& values() const { return tape.value(output); }
  std::map<std::string, Tensor> backward(std::span<const double> seed) const {
    return tape.backward(output, Tensor::vector(std::vector<double>(seed.begin(), seed.end())));
  }
};

template <class F>
concept SignedDistanceField =
    requires(const F& f, std::span<const Vec3> points, std::span<const double> code) {
      { f.code_dim() } -> std::convertible_to<std::size_t>;
      { f.eval(points, code) } -> std::convertible_to<std::vector<double>>;
      { f.eval_taped(points, code) } -> std::same_as<TapedEval>;
    };

namespace detail {
inline Tensor points_tensor(std::span<const Vec3> points) {
  Tensor t = Tensor::zeros({points.size(), 3});
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int k = 0; k < 3; ++k) t[3 * i + static_cast<std::size_t>(k)] = points[i][k];
  }
  return t;
}

inline void require_finite_points(std::span<const Vec3> points) {
  for (const Vec3& p : points) {
    if (!p.allFinite()) throw NumericError("field query point is not finite");
  }
}
}  // namespace detail

/// Closed-form distance fields used as oracles and toy targets.
class AnalyticField {
 public:
  enum class Kind { sphere, box, plane, union_of, translate, scale };

  static AnalyticField sphere(const Vec3& center, double radius) {
    AnalyticField f(Kind::sphere);
    f.center_ = center;
    f.scalar_ = radius;
    return f;
  }
  static AnalyticField box(const Vec3& center, const Vec3& half_extents) {
    AnalyticField f(Kind::box);
    f.center_ = center;
    f.extent_ = half_extents;
    return f;
  }
  /// f(p) = n.p - offset with n normalized.
  static AnalyticField plane(const Vec3& normal, double offset) {
    if (normal.norm() == 0.0) throw ConfigError("plane normal must be nonzero");
    AnalyticField f(Kind::plane);
    f.extent_ = normal.normalized();
    f.scalar_ = offset;
    return f;
  }
  static AnalyticField union_of(std::vector<AnalyticField> children) {
    if (children.empty()) throw ConfigError("union needs at least one child");
    AnalyticField f(Kind::union_of);
    f.children_ = std::move(children);
    return f;
  }
  static AnalyticField translated(AnalyticField child, const Vec3& offset) {
    AnalyticField f(Kind::translate);
    f.center_ = offset;
    f.children_.push_back(std::move(child));
    return f;
  }
  static AnalyticField scaled(AnalyticField child, double factor) {
    if (!(factor > 0.0)) throw ConfigError("scale factor must be positive");
    AnalyticField f(Kind::scale);
    f.scalar_ = factor;
    f.children_.push_back(std::move(child));
    return f;
  }

  Kind kind() const { return kind_; }
  const Vec3& center() const { return center_; }
  const Vec3& extent() const { return extent_; }
  double scalar() const { return scalar_; }
  const std::vector<AnalyticField>& children() const { return children_; }

  std::size_t code_dim() const { return 0; }

  double distance(const Vec3& p) const {
    Vec3 unused;
    return distance(p, unused);
  }

  /// Value and spatial gradient at p.
  double distance(const Vec3& p, Vec3& grad) const {
    switch (kind_) {
      case Kind::sphere: {
        const Vec3 d = p - center_;
        const double r = d.norm();
        grad = r > 0.0 ? Vec3(d / r) : Vec3(0.0, 0.0, 1.0);
        return r - scalar_;
      }
      case Kind::box: {
        const Vec3 d = p - center_;
        const Vec3 q = d.cwiseAbs() - extent_;
        const Vec3 sgn(d.x() < 0 ? -1.0 : 1.0, d.y() < 0 ? -1.0 : 1.0, d.z() < 0 ? -1.0 : 1.0);
        const Vec3 outside = q.cwiseMax(0.0);
        const double out_norm = outside.norm();
        if (out_norm > 0.0) {
          grad = sgn.cwiseProduct(outside) / out_norm;
          return out_norm;
        }
        Eigen::Index axis = 0;
        const double inside = q.maxCoeff(&axis);
        grad.setZero();
        grad[axis] = sgn[axis];
        return inside;
      }
      case Kind::plane:
        grad = extent_;
        return extent_.dot(p) - scalar_;
      case Kind::union_of: {
        double best = children_.front().distance(p, grad);
        Vec3 g;
        for (std::size_t i = 1; i < children_.size(); ++i) {
          const double v = children_[i].distance(p, g);
          if (v < best) {
            best = v;
            grad = g;
          }
        }
        return best;
      }
      case Kind::translate:
        return children_.front().distance(p - center_, grad);
      case Kind::scale:
        // s * f(p / s): gradient is unchanged by the chain rule
        return scalar_ * children_.front().distance(p / scalar_, grad);
    }
    return 0.0;
  }

  std::vector<double> eval(std::span<const Vec3> points, std::span<const double> code) const {
    check_code(code);
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = distance(points[i]);
    return out;
  }

  TapedEval eval_taped(std::span<const Vec3> points, std::span<const double> code) const {
    check_code(code);
    detail::require_finite_points(points);
    TapedEval result;
    result.tape.leaf("code", Tensor::zeros({0}));
    const NodeId pts = result.tape.leaf("points", detail::points_tensor(points));
    std::vector<double> values(points.size());
    Tensor jac = Tensor::zeros({points.size(), 3});
    for (std::size_t i = 0; i < points.size(); ++i) {
      Vec3 g;
      values[i] = distance(points[i], g);
      for (int k = 0; k < 3; ++k) jac[3 * i + static_cast<std::size_t>(k)] = g[k];
    }
    result.output = rowwise_linear(result.tape, pts, std::move(values), std::move(jac));
    return result;
  }

 private:
  explicit AnalyticField(Kind kind) : kind_(kind) {}

  void check_code(std::span<const double> code) const {
    if (!code.empty()) throw ConfigError("analytic field takes no latent code");
  }

  Kind kind_;
  Vec3 center_ = Vec3::Zero();
  Vec3 extent_ = Vec3::Zero();
  double scalar_ = 0.0;
  std::vector<AnalyticField> children_;
};

struct NamedCode {
  std::string name;
  LatentCode code;
};

/// Latent-conditioned MLP: concat(z, p) -> signed distance through a tanh head.
class NeuralField {
 public:
  struct Architecture {
    std::size_t code_dim = 0;
    std::vector<std::size_t> hidden{64, 64, 64, 64};
    Activation hidden_activation = Activation::relu;
    Activation head = Activation::tanh;
    double output_scale = 1.0;
  };

  NeuralField() = default;
  NeuralField(std::size_t code_dim, Mlp net) : code_dim_(code_dim), net_(std::move(net)) {
    if (net_.input_dim() != code_dim_ + 3 || net_.output_dim() != 1) {
      throw ConfigError("neural field network must map D+3 inputs to 1 output");
    }
  }

  static NeuralField create(const Architecture& arch, std::uint64_t seed) {
    Mlp net = Mlp::create(arch.code_dim + 3, arch.hidden, 1, arch.hidden_activation, arch.head, seed);
    net.output_scale = arch.output_scale;
    return NeuralField(arch.code_dim, std::move(net));
  }

  std::size_t code_dim() const { return code_dim_; }
  const Mlp& network() const { return net_; }
  Mlp& network() { return net_; }

  std::vector<NamedCode>& codes() { return codes_; }
  const std::vector<NamedCode>& codes() const { return codes_; }
  const LatentCode& code(const std::string& name) const {
    for (const auto& c : codes_) {
      if (c.name == name) return c.code;
    }
    throw ConfigError("field has no latent code named '" + name + "'");
  }

  std::vector<double> eval(std::span<const Vec3> points, std::span<const double> code) const {
    check_code(code);
    RowMatrix x(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(code_dim_ + 3));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      for (std::size_t k = 0; k < code_dim_; ++k) x(r, static_cast<Eigen::Index>(k)) = code[k];
      for (int k = 0; k < 3; ++k) x(r, static_cast<Eigen::Index>(code_dim_) + k) = points[i][k];
    }
    const RowMatrix y = net_.forward(x);
    return std::vector<double>(y.data(), y.data() + y.size());
  }

  TapedEval eval_taped(std::span<const Vec3> points, std::span<const double> code) const {
    check_code(code);
    detail::require_finite_points(points);
    TapedEval result;
    Tape& tape = result.tape;
    const NodeId z = tape.leaf("code", Tensor::vector(std::vector<double>(code.begin(), code.end())));
    const NodeId pts = tape.leaf("points", detail::points_tensor(points));
    NodeId input = pts;
    if (code_dim_ > 0) input = concat_cols(tape, broadcast_rows(tape, z, points.size()), pts);
    const NodeId y = net_.forward_taped(tape, input, "");
    result.output = reshape(tape, y, {points.size()});
    return result;
  }

  /// Taped evaluation with a separate code per row; leaf "codes" is [n, D].
  TapedEval eval_taped_rows(std::span<const Vec3> points, const Tensor& row_codes) const {
    if (row_codes.rank() != 2 || row_codes.rows() != points.size() || row_codes.cols() != code_dim_) {
      throw ConfigError("per-row codes must be [n, D]");
    }
    TapedEval result;
    Tape& tape = result.tape;
    const NodeId z = tape.leaf("codes", row_codes);
    const NodeId pts = tape.leaf("points", detail::points_tensor(points));
    const NodeId input = code_dim_ > 0 ? concat_cols(tape, z, pts) : pts;
    const NodeId y = net_.forward_taped(tape, input, "");
    result.output = reshape(tape, y, {points.size()});
    return result;
  }

 private:
  void check_code(std::span<const double> code) const {
    if (code.size() != code_dim_) {
      throw ConfigError("latent code has dimension " + std::to_string(code.size()) + ", field expects " +
                        std::to_string(code_dim_));
    }
  }

  std::size_t code_dim_ = 0;
  Mlp net_;
  std::vector<NamedCode> codes_;
};

/// Per-point attribute head: concat(z_shape, z_attr, p) -> m values.
class AttributeField {
 public:
  AttributeField() = default;
  AttributeField(std::size_t shape_dim, std::size_t attr_dim, Mlp net)
      : shape_dim_(shape_dim), attr_dim_(attr_dim), net_(std::move(net)) {
    if (net_.input_dim() != shape_dim_ + attr_dim_ + 3) {
      throw ConfigError("attribute network input must be shape_dim + attr_dim + 3");
    }
  }

  static AttributeField create(std::size_t shape_dim, std::size_t attr_dim, std::size_t channels,
                               const std::vector<std::size_t>& hidden, std::uint64_t seed,
                               Activation head = Activation::sigmoid) {
    return AttributeField(shape_dim, attr_dim,
                          Mlp::create(shape_dim + attr_dim + 3, hidden, channels, Activation::relu, head, seed));
  }

  /// Same value everywhere (no hidden layers, identity head).
  static AttributeField constant(std::size_t shape_dim, std::size_t attr_dim, std::vector<double> value) {
    Mlp net;
    net.head = Activation::identity;
    const std::size_t in = shape_dim + attr_dim + 3;
    net.layers.push_back(DenseLayer{in, value.size(), std::vector<double>(in * value.size(), 0.0), value});
    return AttributeField(shape_dim, attr_dim, std::move(net));
  }

  /// Attribute equal to the query position.
  static AttributeField position(std::size_t shape_dim, std::size_t attr_dim) {
    Mlp net;
    net.head = Activation::identity;
    const std::size_t in = shape_dim + attr_dim + 3;
    DenseLayer layer{in, 3, std::vector<double>(in * 3, 0.0), std::vector<double>(3, 0.0)};
    for (std::size_t k = 0; k < 3; ++k) layer.weight[(shape_dim + attr_dim + k) * 3 + k] = 1.0;
    net.layers.push_back(std::move(layer));
    return AttributeField(shape_dim, attr_dim, std::move(net));
  }

  /// Smooth procedural solid texture: one tanh layer of random plane waves with
  /// spatial frequency ~`frequency`, independent of the codes, sigmoid head.
  static AttributeField texture(std::size_t shape_dim, std::size_t attr_dim, std::size_t channels, std::uint64_t seed,
                                double frequency = 4.0, std::size_t waves = 16) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dir(0.0, frequency);
    std::uniform_real_distribution<double> phase(-3.0, 3.0);
    std::normal_distribution<double> mix(0.0, 1.5);
    const std::size_t in = shape_dim + attr_dim + 3;
    Mlp net;
    net.hidden = Activation::tanh;
    net.head = Activation::sigmoid;
    DenseLayer hidden{in, waves, std::vector<double>(in * waves, 0.0), std::vector<double>(waves)};
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t u = 0; u < waves; ++u) hidden.weight[(shape_dim + attr_dim + k) * waves + u] = dir(rng);
    }
    for (double& b : hidden.bias) b = phase(rng);
    DenseLayer head{waves, channels, std::vector<double>(waves * channels), std::vector<double>(channels, 0.0)};
    for (double& w : head.weight) w = mix(rng);
    net.layers.push_back(std::move(hidden));
    net.layers.push_back(std::move(head));
    return AttributeField(shape_dim, attr_dim, std::move(net));
  }

  std::size_t shape_dim() const { return shape_dim_; }
  std::size_t attr_dim() const { return attr_dim_; }
  std::size_t channels() const { return net_.output_dim(); }
  const Mlp& network() const { return net_; }
  Mlp& network() { return net_; }

  RowMatrix eval(std::span<const Vec3> points, std::span<const double> shape_code,
                 std::span<const double> attr_code) const {
    if (shape_code.size() != shape_dim_ || attr_code.size() != attr_dim_) {
      throw ConfigError("attribute field code dimension mismatch");
    }
    return net_.forward(inputs(points, shape_code, attr_code));
  }

  RowMatrix inputs(std::span<const Vec3> points, std::span<const double> shape_code,
                   std::span<const double> attr_code) const {
    const std::size_t width = shape_dim_ + attr_dim_ + 3;
    RowMatrix x(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      Eigen::Index c = 0;
      for (double v : shape_code) x(r, c++) = v;
      for (double v : attr_code) x(r, c++) = v;
      for (int k = 0; k < 3; ++k) x(r, c++) = points[i][k];
    }
    return x;
  }

 private:
  std::size_t shape_dim_ = 0;
  std::size_t attr_dim_ = 0;
  Mlp net_;
};

/// Runtime choice of field for the CLI and file formats.
using AnyField = std::variant<AnalyticField, NeuralField>;

static_assert(SignedDistanceField<AnalyticField>);
static_assert(SignedDistanceField<NeuralField>);

}  // namespace difftrace

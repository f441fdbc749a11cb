#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "difftrace/diffmath.hpp"
#include "difftrace/parallel.hpp"

namespace difftrace {

enum class Activation { identity, relu, tanh, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

inline double apply_activation(Activation a, double v) {
  switch (a) {
    case Activation::identity: return v;
    case Activation::relu: return relu_value(v);
    case Activation::tanh: return std::tanh(v);
    case Activation::sigmoid: return sigmoid_value(v);
  }
  return v;
}

inline NodeId apply_activation(Tape& tape, Activation a, NodeId x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return relu(tape, x);
    case Activation::tanh: return difftrace::tanh(tape, x);
    case Activation::sigmoid: return sigmoid(tape, x);
  }
  return x;
}

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // [in, out] row-major
  std::vector<double> bias;    // [out]
};

/// Fully connected network: hidden layers share one activation, the last layer
/// has its own head activation followed by a constant output scale.
struct Mlp {
  std::vector<DenseLayer> layers;
  Activation hidden = Activation::relu;
  Activation head = Activation::tanh;
  double output_scale = 1.0;

  /// Rows per evaluation chunk. Fixed so results never depend on the thread count.
  static constexpr std::size_t kChunkRows = 256;

  static Mlp create(std::size_t input_dim, const std::vector<std::size_t>& hidden_widths,
                    std::size_t output_dim, Activation hidden_act, Activation head_act,
                    std::uint64_t seed) {
    Mlp net;
    net.hidden = hidden_act;
    net.head = head_act;
    std::mt19937_64 rng(seed);
    std::size_t in = input_dim;
    auto add_layer = [&](std::size_t out, double gain) {
      DenseLayer layer{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
      const double bound = gain * std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(1, in)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& w : layer.weight) w = dist(rng);
      net.layers.push_back(std::move(layer));
      in = out;
    };
    const double hidden_gain = hidden_act == Activation::relu ? std::sqrt(2.0) : 1.0;
    for (std::size_t width : hidden_widths) add_layer(width, hidden_gain);
    add_layer(output_dim, 1.0);
    return net;
  }

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }

  /// Untaped batched evaluation; x is [n, input_dim].
  RowMatrix forward(const RowMatrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) throw ConfigError("mlp: input width mismatch");
    const std::size_t n = static_cast<std::size_t>(x.rows());
    RowMatrix result(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(output_dim()));
    const std::size_t chunks = (n + kChunkRows - 1) / kChunkRows;
    parallel_for_blocks(chunks, 4, [&](std::size_t c0, std::size_t c1) {
      for (std::size_t c = c0; c < c1; ++c) {
        const std::size_t r0 = c * kChunkRows;
        const std::size_t rows = std::min(kChunkRows, n - r0);
        RowMatrix act = x.middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(rows));
        forward_block(act);
        result.middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(rows)) = act;
      }
    });
    return result;
  }

  /// Records the network on the tape. Weights become leaves "<prefix>layer<i>.weight/.bias".
  NodeId forward_taped(Tape& tape, NodeId input, const std::string& prefix) const {
    NodeId h = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const DenseLayer& l = layers[i];
      const NodeId w = tape.leaf(prefix + "layer" + std::to_string(i) + ".weight",
                                 Tensor::matrix(l.in, l.out, l.weight));
      const NodeId b = tape.leaf(prefix + "layer" + std::to_string(i) + ".bias", Tensor::vector(l.bias));
      h = affine(tape, h, w, b);
      const bool last = i + 1 == layers.size();
      h = apply_activation(tape, last ? head : hidden, h);
    }
    if (output_scale != 1.0) h = scale(tape, h, output_scale);
    return h;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Parameters in layer order (weight then bias); matches gradient_vector().
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& l : layers) {
      p.insert(p.end(), l.weight.begin(), l.weight.end());
      p.insert(p.end(), l.bias.begin(), l.bias.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) throw ConfigError("mlp: parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers) {
      for (double& w : l.weight) w = p[k++];
      for (double& b : l.bias) b = p[k++];
    }
  }

  /// Flattens leaf gradients from a backward pass into parameters() order.
  std::vector<double> gradient_vector(const std::map<std::string, Tensor>& grads,
                                      const std::string& prefix) const {
    std::vector<double> g;
    g.reserve(parameter_count());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& gw = grads.at(prefix + "layer" + std::to_string(i) + ".weight").values;
      const auto& gb = grads.at(prefix + "layer" + std::to_string(i) + ".bias").values;
      g.insert(g.end(), gw.begin(), gw.end());
      g.insert(g.end(), gb.begin(), gb.end());
    }
    return g;
  }

 private:
  void forward_block(RowMatrix& act) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const DenseLayer& l = layers[i];
      RowMatrix next(act.rows(), static_cast<Eigen::Index>(l.out));
      affine_kernel(ConstMatrixMap(act.data(), act.rows(), act.cols()),
                    ConstMatrixMap(l.weight.data(), static_cast<Eigen::Index>(l.in),
                                   static_cast<Eigen::Index>(l.out)),
                    l.bias, MatrixMap(next.data(), next.rows(), next.cols()));
      const Activation a = i + 1 == layers.size() ? head : hidden;
      if (a != Activation::identity) {
        double* v = next.data();
        for (Eigen::Index k = 0; k < next.size(); ++k) v[k] = apply_activation(a, v[k]);
      }
      act.swap(next);
    }
    if (output_scale != 1.0) act *= output_scale;
  }
};

}  // namespace difftrace

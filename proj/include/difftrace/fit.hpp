#pragma once

// Desk-scale stand-in for auto-decoder training: fits a neural field (and one
// latent code per target) to analytic distance fields.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "difftrace/adam.hpp"
#include "difftrace/field.hpp"

namespace difftrace {

struct FitConfig {
  NeuralField::Architecture arch;
  std::size_t samples = 50000;
  std::size_t validation_samples = 4000;
  std::size_t epochs = 40;
  std::size_t batch_size = 256;
  double lr = 2e-3;
  double lr_final_fraction = 0.02;
  double near_surface_fraction = 0.5;
  double near_surface_sigma = 0.05;
  double code_init_sigma = 0.01;
  double code_reg = 1e-4;
  double code_lr_scale = 1.0;
  double max_validation_error = 0.05;
  std::uint64_t seed = 0;
};

struct FitReport {
  double initial_validation_mae = 0.0;
  double validation_mae = 0.0;  // worst target
  std::vector<double> per_target_mae;
  std::vector<double> epoch_loss;
  bool ok = false;  // validation_mae below max_validation_error
};

struct FitResult {
  NeuralField field;
  std::vector<LatentCode> codes;
  FitReport report;
};

/// Uniform sample in the unit ball.
inline Vec3 sample_unit_ball(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    Vec3 p(u(rng), u(rng), u(rng));
    if (p.squaredNorm() <= 1.0) return p;
  }
}

/// Point on the zero level set, found by projecting random points along the gradient.
inline Vec3 sample_surface(const AnalyticField& target, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Vec3 p = sample_unit_ball(rng) * 0.9;
    for (int it = 0; it < 8; ++it) {
      Vec3 g;
      const double f = target.distance(p, g);
      if (std::abs(f) < 1e-9) break;
      p -= f * g;
    }
    if (std::abs(target.distance(p)) < 1e-7 && p.squaredNorm() < 1.0) return p;
  }
  throw NumericError("could not sample the target surface inside the unit sphere");
}

/// Training/validation mixture: uniform in the unit ball plus gaussian-jittered surface points.
inline std::vector<Vec3> sample_training_points(const AnalyticField& target, std::size_t count,
                                                double near_fraction, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, sigma);
  std::vector<Vec3> pts;
  pts.reserve(count);
  const auto near = static_cast<std::size_t>(std::round(near_fraction * static_cast<double>(count)));
  while (pts.size() < count - near) pts.push_back(sample_unit_ball(rng));
  while (pts.size() < count) {
    Vec3 p = sample_surface(target, rng) + Vec3(jitter(rng), jitter(rng), jitter(rng));
    if (p.squaredNorm() <= 1.0) pts.push_back(p);
  }
  return pts;
}

namespace detail {

inline double mean_abs_error(const NeuralField& field, const LatentCode& code, std::span<const Vec3> pts,
                             std::span<const double> truth) {
  const std::vector<double> pred = field.eval(pts, code);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return pred.empty() ? 0.0 : acc / static_cast<double>(pred.size());
}

}  // namespace detail

/// Shared network plus one optimized code per target (auto-decoder).
inline FitResult fit_family(const std::vector<AnalyticField>& targets, const FitConfig& cfg) {
  if (targets.empty()) throw ConfigError("fit needs at least one target");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t dim = cfg.arch.code_dim;
  std::mt19937_64 rng(cfg.seed);

  FitResult result;
  result.field = NeuralField::create(cfg.arch, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> code_init(0.0, cfg.code_init_sigma);
  result.codes.resize(targets.size());
  for (auto& c : result.codes) {
    c = LatentCode::zeros(dim);
    for (double& v : c.values) v = code_init(rng);
  }

  // training set: (target index, point, truth)
  const std::size_t per_target = std::max<std::size_t>(1, cfg.samples / targets.size());
  std::vector<std::size_t> owner;
  std::vector<Vec3> points;
  std::vector<double> truth;
  std::vector<std::vector<Vec3>> val_points(targets.size());
  std::vector<std::vector<double>> val_truth(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (const Vec3& p : sample_training_points(targets[t], per_target, cfg.near_surface_fraction,
                                                cfg.near_surface_sigma, rng)) {
      owner.push_back(t);
      points.push_back(p);
      truth.push_back(targets[t].distance(p));
    }
    val_points[t] = sample_training_points(targets[t], cfg.validation_samples, cfg.near_surface_fraction,
                                           cfg.near_surface_sigma, rng);
    for (const Vec3& p : val_points[t]) val_truth[t].push_back(targets[t].distance(p));
  }

  auto validate = [&]() {
    std::vector<double> maes(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
      maes[t] = detail::mean_abs_error(result.field, result.codes[t], val_points[t], val_truth[t]);
    }
    return maes;
  };
  {
    const auto initial = validate();
    result.report.initial_validation_mae = *std::max_element(initial.begin(), initial.end());
  }

  Mlp& net = result.field.network();
  std::vector<double> params = net.parameters();
  const std::size_t n_net = params.size();
  for (const auto& c : result.codes) params.insert(params.end(), c.values.begin(), c.values.end());
  Adam adam(params.size(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  const std::size_t n = points.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * cfg.epochs);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  std::vector<double> grad(params.size());
  std::vector<Vec3> batch_pts;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      batch_pts.resize(count);
      Tensor codes = Tensor::zeros({count, dim});
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t s = order[start + i];
        batch_pts[i] = points[s];
        for (std::size_t k = 0; k < dim; ++k) codes[i * dim + k] = params[n_net + owner[s] * dim + k];
      }
      const TapedEval taped = result.field.eval_taped_rows(batch_pts, codes);
      const Tensor& pred = taped.values();
      std::vector<double> seed(count);
      double loss = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const double r = pred[i] - truth[order[start + i]];
        loss += std::abs(r);
        seed[i] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) / static_cast<double>(count);
      }
      epoch_loss += loss;
      const auto grads = taped.backward(seed);
      const std::vector<double> gnet = net.gradient_vector(grads, "");
      std::fill(grad.begin(), grad.end(), 0.0);
      std::copy(gnet.begin(), gnet.end(), grad.begin());
      const Tensor& gcodes = grads.at("codes");
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t t = owner[order[start + i]];
        for (std::size_t k = 0; k < dim; ++k) grad[n_net + t * dim + k] += cfg.code_lr_scale * gcodes[i * dim + k];
      }
      for (std::size_t j = n_net; j < params.size(); ++j) grad[j] += 2.0 * cfg.code_reg * params[j];

      const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
      const double lr_scale =
          cfg.lr_final_fraction + (1.0 - cfg.lr_final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      adam.set_lr(cfg.lr * lr_scale);
      adam.step(params, grad);
      ++step;
      net.set_parameters(std::span<const double>(params).first(n_net));
    }
    result.report.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(n_net + t * dim), dim, result.codes[t].values.begin());
  }

  result.report.per_target_mae = validate();
  result.report.validation_mae =
      *std::max_element(result.report.per_target_mae.begin(), result.report.per_target_mae.end());
  result.report.ok = result.report.validation_mae < cfg.max_validation_error;
  result.field.codes().clear();
  for (std::size_t t = 0; t < targets.size(); ++t) {
    result.field.codes().push_back({"shape" + std::to_string(t), result.codes[t]});
  }
  return result;
}

/// Single-target fit. With arch.code_dim > 0 the one code is optimized as well.
inline FitResult fit_to_analytic(const AnalyticField& target, const FitConfig& cfg) {
  return fit_family({target}, cfg);
}

struct AttributeFitConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t samples = 20000;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double lr = 5e-3;
  double surface_sigma = 0.01;  // jitter off the zero level set
  std::uint64_t seed = 0;
};

struct AttributeFitResult {
  AttributeField field;
  double train_mse = 0.0;
};

/// Fits an attribute field (no codes) to a per-point target on and near a shape's surface.
template <class Target>
AttributeFitResult fit_attribute(const AnalyticField& shape, std::size_t channels, Target&& target,
                                 const AttributeFitConfig& cfg) {
  if (channels == 0 || cfg.batch_size == 0) throw ConfigError("fit_attribute: channels and batch size must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> jitter(0.0, cfg.surface_sigma);
  std::vector<Vec3> points(cfg.samples);
  std::vector<double> truth(cfg.samples * channels);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    points[i] = sample_surface(shape, rng) + Vec3(jitter(rng), jitter(rng), jitter(rng));
    const std::vector<double> t = target(points[i]);
    if (t.size() != channels) throw ConfigError("fit_attribute: target returned the wrong channel count");
    std::copy(t.begin(), t.end(), truth.begin() + static_cast<std::ptrdiff_t>(i * channels));
  }
  AttributeFitResult res{AttributeField::create(0, 0, channels, cfg.hidden, cfg.seed), 0.0};
  Mlp& net = res.field.network();
  std::vector<double> params = net.parameters();
  Adam adam(params.size(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(cfg.samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < cfg.samples; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, cfg.samples - start);
      Tensor x = Tensor::zeros({count, 3});
      for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < 3; ++k) x[i * 3 + k] = points[order[start + i]][static_cast<int>(k)];
      }
      Tape tape;
      const NodeId y = net.forward_taped(tape, tape.constant(std::move(x)), "");
      const Tensor& pred = tape.value(y);
      Tensor seed = Tensor::zeros({count, channels});
      for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double r = pred[i * channels + c] - truth[order[start + i] * channels + c];
          total += r * r;
          seed[i * channels + c] = 2.0 * r / static_cast<double>(count);
        }
      }
      adam.step(params, net.gradient_vector(tape.backward(y, seed), ""));
      net.set_parameters(params);
    }
    res.train_mse = total / static_cast<double>(cfg.samples * channels);
  }
  return res;
}

}  // namespace difftrace

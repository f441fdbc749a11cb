#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "difftrace/error.hpp"

namespace difftrace {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a flat parameter vector.
class Adam {
 public:
  explicit Adam(std::size_t dim, AdamConfig cfg = {}) : cfg_(cfg), m_(dim, 0.0), v_(dim, 0.0) {}

  /// Returns false (and leaves params and moments untouched) on a non-finite gradient.
  bool step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw ConfigError("adam: parameter/gradient dimension mismatch");
    }
    for (double g : grads) {
      if (!std::isfinite(g)) {
        ++skipped_;
        return false;
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      params[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
    return true;
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long steps() const { return t_; }
  long skipped() const { return skipped_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
  long skipped_ = 0;
};

}  // namespace difftrace

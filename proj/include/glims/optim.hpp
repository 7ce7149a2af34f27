#pragma once

#include <cstdint>
#include <vector>

#include "glims/init.hpp"

namespace glims {

struct AdamWOptions {
  double lr_max = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay. Moments have the parameter's dtype and
/// shape; the arithmetic of one update is done in double.
class AdamW {
 public:
  AdamW(ParamList params, AdamWOptions options = {});

  /// p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p.
  /// Throws NumericError naming any parameter without a gradient.
  void step(double lr);
  void zero_grad();

  const ParamList& params() const { return params_; }
  const AdamWOptions& options() const { return options_; }
  std::int64_t steps() const { return step_; }
  void set_steps(std::int64_t s);

  /// First and second moments, aligned with params().
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  ParamList params_;
  AdamWOptions options_;
  std::vector<Tensor> m_, v_;
  std::int64_t step_ = 0;
};

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2, clamped to lr_min
/// for t >= T.
double cosine_lr(double t, double total, double lr_max, double lr_min = 0.0);

}  // namespace glims

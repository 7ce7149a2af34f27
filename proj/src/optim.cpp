#include "glims/optim.hpp"

#include <cmath>
#include <numbers>

namespace glims {

AdamW::AdamW(ParamList params, AdamWOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
  }
}

void AdamW::set_steps(std::int64_t s) {
  if (s < 0) throw ConfigError("optimizer step count must be >= 0");
  step_ = s;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

void AdamW::step(double lr) {
  for (const auto& p : params_)
    if (!p.tensor.has_grad()) throw NumericError("adamw: parameter '" + p.name + "' has no gradient");
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = lr * options_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor param = params_[i].tensor;
    const Tensor grad = param.grad();
    dispatch(param.dtype(), [&](auto tag) {
      using T = decltype(tag);
      T* w = param.mutable_data<T>();
      const T* g = grad.data<T>();
      T* m = m_[i].mutable_data<T>();
      T* v = v_[i].mutable_data<T>();
      const std::int64_t n = param.numel();
#pragma omp parallel for schedule(static)
      for (std::int64_t j = 0; j < n; ++j) {
        const double gj = g[j];
        const double mj = b1 * m[j] + (1 - b1) * gj;
        const double vj = b2 * v[j] + (1 - b2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / c1) / (std::sqrt(vj / c2) + options_.eps);
        w[j] = static_cast<T>(w[j] - lr * update - decay * w[j]);
      }
    });
  }
}

double cosine_lr(double t, double total, double lr_max, double lr_min) {
  if (total <= 0) throw ConfigError("cosine_lr: total must be positive");
  if (t < 0) throw ConfigError("cosine_lr: t must be >= 0");
  if (t >= total) return lr_min;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

}  // namespace glims

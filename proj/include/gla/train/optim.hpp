#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "gla/errors.hpp"
#include "gla/numerics/tensor.hpp"

namespace gla {

// Cosine annealing from base_lr at step 0 down to zero at total_steps.
inline double lr_at(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw ValidationError("total_steps must be positive");
  if (step >= total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

inline double global_grad_norm(const std::vector<Tensor*>& params) {
  double sq = 0.0;
  for (const Tensor* p : params) {
    if (!p->has_grad()) continue;
    for (double g : p->grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

// Rescales all gradients so their joint l2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_global_norm(const std::vector<Tensor*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Tensor* p : params) {
      if (!p->has_grad()) continue;
      for (double& g : p->mutable_grad()) g *= factor;
    }
  }
  return norm;
}

// Adam with decoupled weight decay; one moment pair per tensor.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(std::vector<Tensor*> params, Options options) : params_(std::move(params)), opt_(options) {
    for (const Tensor* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto w = p.mutable_values();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
        const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
        w[j] -= lr * (update + opt_.weight_decay * w[j]);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace gla

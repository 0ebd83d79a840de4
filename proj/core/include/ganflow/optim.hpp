#pragma once

#include <cmath>

#include "ganflow/errors.hpp"
#include "ganflow/param_vector.hpp"

namespace ganflow {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a ParamVector; the gradient must share the parameter layout.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamVector& params, const ParamVector& grad) {
    if (grad.size() != params.size()) throw ShapeError("Adam: gradient/parameter size mismatch");
    if (!grad.flat().allFinite()) throw NumericalError("Adam: non-finite gradient");
    if (m_.size() != params.flat().size()) {
      m_ = Eigen::VectorXd::Zero(params.flat().size());
      v_ = Eigen::VectorXd::Zero(params.flat().size());
      t_ = 0;
    }
    ++t_;
    const auto& g = grad.flat();
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& p = params.flat();
    for (Eigen::Index i = 0; i < p.size(); ++i)
      p(i) -= cfg_.lr * (m_(i) / c1) / (std::sqrt(v_(i) / c2) + cfg_.eps);
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  [[nodiscard]] long steps() const { return t_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace ganflow

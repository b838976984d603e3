#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "trajgraft/config.hpp"
#include "trajgraft/nn.hpp"

namespace trajgraft {

// Plain SGD or Adam (bias-corrected) over a ParameterSet.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, ParameterSet& params)
      : kind_(cfg.optimizer), lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), params_(params) {
    if (kind_ == OptimizerKind::adam) {
      for (auto& [name, t] : params_) {
        m_[name].assign(t.numel(), 0.0);
        v_[name].assign(t.numel(), 0.0);
      }
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params_) {
      auto w = p.mutable_data();
      auto g = p.mutable_grad();
      if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
        continue;
      }
      auto& m = m_[name];
      auto& v = v_[name];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  ParameterSet& params_;
  std::map<std::string, std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace trajgraft

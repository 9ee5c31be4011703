#pragma once

#include <cmath>
#include <vector>

#include "params.hpp"

namespace quesnet {

// Adam with bias correction. Moment buffers are keyed by registration
// order, so the same ParamMap must be passed to every step.
class Adam {
 public:
  explicit Adam(ParamMap& params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& e : params) {
      m_.emplace_back(e.second.size(), 0.0);
      v_.emplace_back(e.second.size(), 0.0);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void zero_grad() { params_->zero_grad(); }

  void step() {
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t idx = 0;
    for (auto& e : *params_) {
      Tensor& p = e.second;
      auto& g = p.grad();
      auto& m = m_[idx];
      auto& v = v_[idx];
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        double mh = m[i] / c1;
        double vh = v[i] / c2;
        p.data()[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
      ++idx;
    }
  }

 private:
  ParamMap* params_;
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace quesnet

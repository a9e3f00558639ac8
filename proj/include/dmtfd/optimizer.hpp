#pragma once

// Adaptive moment estimation with bias correction; standard decay rates.

#include <cmath>
#include <vector>

#include "dmtfd/encoders.hpp"

namespace dmtfd {

template <class Real>
class AdamOptimizer {
 public:
  AdamOptimizer(ModelParameters<Real>& model, Real lr, Real beta1 = Real(0.9),
                Real beta2 = Real(0.999), Real eps = Real(1e-8))
      : model_(model), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(model.params.size());
    v_.reserve(model.params.size());
    for (const auto& p : model.params) {
      m_.push_back(Mat<Real>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat<Real>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step() {
    ++t_;
    const Real bc1 = Real(1) - std::pow(beta1_, static_cast<Real>(t_));
    const Real bc2 = Real(1) - std::pow(beta2_, static_cast<Real>(t_));
    for (std::size_t i = 0; i < model_.params.size(); ++i) {
      auto& p = model_.params[i];
      m_[i] = beta1_ * m_[i] + (Real(1) - beta1_) * p.grad;
      v_[i].array() =
          beta2_ * v_[i].array() + (Real(1) - beta2_) * p.grad.array().square();
      p.value.array() -= lr_ * (m_[i].array() / bc1) /
                         ((v_[i].array() / bc2).sqrt() + eps_);
    }
  }

  void set_lr(Real lr) { lr_ = lr; }
  Real lr() const { return lr_; }
  long steps_taken() const { return t_; }

 private:
  ModelParameters<Real>& model_;
  Real lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat<Real>> m_, v_;
};

}  // namespace dmtfd

#pragma once

#include <cmath>

#include "marsnet/core/autograd.hpp"
#include "marsnet/model/params.hpp"

namespace marsnet::train {

using ag::Tape;
using ag::Var;
using model::ParamStore;

/// Sum of squared kernel weights; biases and normalization affine terms are
/// not regularized.
template <class T>
double l2_sum(const ParamStore<T>& params) {
  double s = 0.0;
  for (const auto& p : params)
    if (p.decays())
      for (T v : p.value.vec()) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

/// Masked MSE over every labeled pixel of the batch plus lambda * sum(theta^2).
/// The MSE part lives on the tape; the penalty's gradient 2*lambda*theta is
/// added directly to the parameter gradients by backward().
template <class T>
struct MaskedLoss {
  Var mse;
  double mse_value = 0.0;
  double l2 = 0.0;
  double lambda = 0.0;
  std::size_t labeled = 0;

  double value() const { return mse_value + lambda * l2; }
  bool empty() const { return labeled == 0; }

  void backward(Tape<T>& t, ParamStore<T>& params) const {
    if (!empty()) t.backward(mse);
    if (lambda == 0.0) return;
    for (auto& p : params) {
      if (!p.decays()) continue;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
      for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += static_cast<T>(2.0 * lambda) * p.value[i];
    }
  }
};

template <class T>
MaskedLoss<T> masked_loss(Tape<T>& t, Var pred, const Tensor<T>& label, const Tensor<T>& mask, const ParamStore<T>& params,
                          double lambda) {
  MaskedLoss<T> loss;
  loss.mse = ag::masked_mse(t, pred, label, mask);
  loss.mse_value = static_cast<double>(t.value(loss.mse)[0]);
  for (T m : mask.vec()) loss.labeled += m != T{0};
  loss.lambda = lambda;
  if (lambda != 0.0) loss.l2 = l2_sum(params);
  return loss;
}

/// Adam with bias-corrected moments over every trainable parameter.
template <class T>
class Adam {
 public:
  Adam(ParamStore<T>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& p : params_) {
      auto& m = m_[k];
      auto& v = v_[k];
      ++k;
      if (!p.trainable() || p.grad.shape() != p.value.shape()) continue;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        const double mh = m[i] / c1, vh = v[i] / c2;
        p.value[i] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  long steps() const { return t_; }

 private:
  ParamStore<T>& params_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor<double>> m_, v_;
};

}  // namespace marsnet::train

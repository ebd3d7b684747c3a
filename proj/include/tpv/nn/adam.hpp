#pragma once
// Adam with decoupled weight decay. Decay is applied only to parameters
// flagged weight_decay (conv/linear weights), never to norms, biases, or
// attention context vectors.

#include <cmath>
#include <vector>

#include "tpv/nn/tensor.hpp"

namespace tpv::nn {

template <typename S>
class Adam {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(ParamRefs<S> params, Config cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  void step() {
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S bias1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, t_));
    const S bias2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, t_));
    const S lr = static_cast<S>(cfg_.lr);
    const S eps = static_cast<S>(cfg_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      m_[i] = b1 * m_[i] + (S(1) - b1) * p->grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -=
          lr * (m_[i].array() / bias1) / ((v_[i].array() / bias2).sqrt() + eps);
      if (p->weight_decay && cfg_.weight_decay > 0)
        p->value *= (S(1) - lr * static_cast<S>(cfg_.weight_decay));
    }
  }

  void zero_grads() { tpv::nn::zero_grads(params_); }

 private:
  ParamRefs<S> params_;
  Config cfg_;
  std::vector<Mat<S>> m_, v_;
  long t_ = 0;
};

}  // namespace tpv::nn

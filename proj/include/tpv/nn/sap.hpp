#pragma once
// Self-attentive pooling over frame-level features.
//
//   u_t = tanh(W_s h_t + b_s)
//   w   = softmax_t(u_t . mu)
//   out = sum_t w_t h_t
//
// Single shared context vector mu; mu = 0 makes this exact mean pooling,
// which is the initialization used here.

#include <cmath>
#include <stdexcept>

#include "tpv/nn/layers.hpp"

namespace tpv::nn {

template <typename S>
struct SapParams {
  ParamTensor<S> Ws, bs, mu;

  void init(int d, const std::string& name, Rng rng) {
    Ws.name = name + ".Ws";
    bs.name = name + ".bs";
    mu.name = name + ".mu";
    Ws.weight_decay = true;
    Ws.init_normal(d, d, std::sqrt(1.0 / d), rng);
    bs.init_zero(d, 1);
    mu.init_zero(d, 1);
  }

  void collect(ParamRefs<S>& params) {
    params.push_back(&Ws);
    params.push_back(&bs);
    params.push_back(&mu);
  }

  int dim() const { return static_cast<int>(Ws.value.rows()); }
};

namespace detail {

// frames as columns: H is [d x T]. Fills U = tanh(Ws H + bs) and the
// attention weights w (softmax over frames).
template <typename S>
void sap_forward_one(const Eigen::Ref<const Mat<S>>& H, const Mat<S>& Ws, const Mat<S>& bs,
                     const Mat<S>& mu, Mat<S>& U, Vec<S>& w) {
  U.noalias() = Ws * H;
  U.colwise() += bs.col(0);
  U = U.array().tanh();
  Vec<S> logits = U.transpose() * mu.col(0);
  const S peak = logits.maxCoeff();
  w = (logits.array() - peak).exp();
  w /= w.sum();
}

}  // namespace detail

// frames: [T x d], one row per frame. Returns the pooled vector[d]; if
// weights_out is given it receives the T attention weights.
template <typename S>
Vec<S> sap_pool(const Mat<S>& frames, const SapParams<S>& p, Vec<S>* weights_out = nullptr) {
  if (frames.rows() < 1) throw std::runtime_error("sap_pool: no frames");
  if (frames.cols() != p.dim()) throw std::runtime_error("sap_pool: frame dim mismatch");
  Mat<S> H = frames.transpose();
  Mat<S> U;
  Vec<S> w;
  detail::sap_forward_one<S>(H, p.Ws.value, p.bs.value, p.mu.value, U, w);
  if (weights_out) *weights_out = w;
  return H * w;
}

// Batched layer form. Input must be frame-shaped: w == 1, h = T, channels = d.
// Output is [d x n] pooled vectors.
template <typename S>
class SapPool : public Layer<S> {
 public:
  explicit SapPool(SapParams<S>* params) : p_(params) {}

  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    if (in.w != 1) throw std::runtime_error("sap: expects freq-pooled input (w == 1)");
    if (in.h < 1) throw std::runtime_error("sap: no frames");
    if (in.channels() != p_->dim()) throw std::runtime_error("sap: feature dim mismatch");
    const int T = in.h;
    out.resize(in.channels(), in.n, 1, 1);
    if (train) {
      input_ = in.data;
      U_.resize(in.channels(), in.data.cols());
      weights_.resize(T, in.n);
    }
    Mat<S> U;
    Vec<S> w;
    for (int n = 0; n < in.n; ++n) {
      auto H = in.sample(n);
      detail::sap_forward_one<S>(H, p_->Ws.value, p_->bs.value, p_->mu.value, U, w);
      out.data.col(n).noalias() = H * w;
      if (train) {
        U_.middleCols(static_cast<Eigen::Index>(n) * T, T) = U;
        weights_.col(n) = w;
      }
    }
    T_ = T;
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    if (input_.size() == 0) throw std::runtime_error("sap: backward without train forward");
    const int T = T_;
    grad_in.resize(grad_out.channels(), grad_out.n, T, 1);
    for (int n = 0; n < grad_out.n; ++n) {
      auto H = input_.middleCols(static_cast<Eigen::Index>(n) * T, T);
      auto U = U_.middleCols(static_cast<Eigen::Index>(n) * T, T);
      Vec<S> w = weights_.col(n);
      Vec<S> g = grad_out.data.col(n);
      Vec<S> dw = H.transpose() * g;
      Vec<S> da = w.cwiseProduct(dw - Vec<S>::Constant(T, w.dot(dw)));
      p_->mu.grad.col(0).noalias() += U * da;
      Mat<S> dpre = (p_->mu.value.col(0) * da.transpose()).cwiseProduct(
          (Mat<S>::Ones(U.rows(), T) - U.cwiseProduct(U)));
      p_->Ws.grad.noalias() += dpre * H.transpose();
      p_->bs.grad.col(0) += dpre.rowwise().sum();
      grad_in.sample(n).noalias() = g * w.transpose();
      grad_in.sample(n).noalias() += p_->Ws.value.transpose() * dpre;
    }
  }

  void collect(ParamRefs<S>& params) override { p_->collect(params); }

 private:
  SapParams<S>* p_;
  Mat<S> input_, U_, weights_;
  int T_ = 0;
};

}  // namespace tpv::nn

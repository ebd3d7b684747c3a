#pragma once
// Trainable layers with explicit forward/backward passes.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "tpv/nn/tensor.hpp"

namespace tpv::nn {

// Non-trainable persistent buffers (batch-norm running statistics).
template <typename S>
struct StateRef {
  std::string name;
  Vec<S>* vec;
};

template <typename S>
using StateRefs = std::vector<StateRef<S>>;

template <typename S>
struct Layer {
  virtual ~Layer() = default;
  virtual void forward(const Batch<S>& in, Batch<S>& out, bool train) = 0;
  // Consumes the gradient w.r.t. the forward output; fills the gradient
  // w.r.t. the forward input and accumulates parameter gradients.
  virtual void backward(const Batch<S>& grad_out, Batch<S>& grad_in) = 0;
  virtual void collect(ParamRefs<S>& params) {}
  virtual void collect_state(StateRefs<S>& state) {}
};

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename S>
class Conv2d : public Layer<S> {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad, Rng rng)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
    weight_.name = std::move(name) + ".weight";
    weight_.weight_decay = true;
    double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kernel * kernel));
    weight_.init_normal(out_ch, static_cast<Eigen::Index>(in_ch) * kernel * kernel, stddev, rng);
  }

  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    if (in.channels() != in_ch_) throw std::runtime_error("conv: channel mismatch");
    in_h_ = in.h;
    in_w_ = in.w;
    const int ho = conv_out_dim(in.h, k_, stride_, pad_);
    const int wo = conv_out_dim(in.w, k_, stride_, pad_);
    if (ho <= 0 || wo <= 0) throw std::runtime_error("conv: input smaller than kernel");
    im2col(in, cols_);
    out.resize(out_ch_, in.n, ho, wo);
    out.data.noalias() = weight_.value * cols_;
    if (!train) cols_.resize(0, 0);
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    if (cols_.size() == 0) throw std::runtime_error("conv: backward without cached forward");
    weight_.grad.noalias() += grad_out.data * cols_.transpose();
    Mat<S> dcols = weight_.value.transpose() * grad_out.data;
    col2im(dcols, grad_out.n, grad_out.h, grad_out.w, grad_in);
  }

  void collect(ParamRefs<S>& params) override { params.push_back(&weight_); }

  ParamTensor<S>& weight() { return weight_; }

 private:
  void im2col(const Batch<S>& in, Mat<S>& cols) const {
    const int ho = conv_out_dim(in.h, k_, stride_, pad_);
    const int wo = conv_out_dim(in.w, k_, stride_, pad_);
    cols.resize(static_cast<Eigen::Index>(in_ch_) * k_ * k_,
                static_cast<Eigen::Index>(in.n) * ho * wo);
    cols.setZero();
    const Eigen::Index sp_in = static_cast<Eigen::Index>(in.h) * in.w;
    const Eigen::Index sp_out = static_cast<Eigen::Index>(ho) * wo;
    for (int ci = 0; ci < in_ch_; ++ci) {
      const S* src = in.data.row(ci).data();
      for (int dy = 0; dy < k_; ++dy)
        for (int dx = 0; dx < k_; ++dx) {
          S* dst = cols.row((static_cast<Eigen::Index>(ci) * k_ + dy) * k_ + dx).data();
          for (int n = 0; n < in.n; ++n)
            for (int y = 0; y < ho; ++y) {
              const int iy = y * stride_ + dy - pad_;
              if (iy < 0 || iy >= in.h) continue;
              const S* srow = src + n * sp_in + static_cast<Eigen::Index>(iy) * in.w;
              S* drow = dst + n * sp_out + static_cast<Eigen::Index>(y) * wo;
              for (int x = 0; x < wo; ++x) {
                const int ix = x * stride_ + dx - pad_;
                if (ix >= 0 && ix < in.w) drow[x] = srow[ix];
              }
            }
        }
    }
  }

  void col2im(const Mat<S>& dcols, int n_samples, int ho, int wo, Batch<S>& grad_in) const {
    grad_in.resize(in_ch_, n_samples, in_h_, in_w_);
    grad_in.data.setZero();
    const Eigen::Index sp_in = static_cast<Eigen::Index>(in_h_) * in_w_;
    const Eigen::Index sp_out = static_cast<Eigen::Index>(ho) * wo;
    for (int ci = 0; ci < in_ch_; ++ci) {
      S* dst = grad_in.data.row(ci).data();
      for (int dy = 0; dy < k_; ++dy)
        for (int dx = 0; dx < k_; ++dx) {
          const S* src = dcols.row((static_cast<Eigen::Index>(ci) * k_ + dy) * k_ + dx).data();
          for (int n = 0; n < n_samples; ++n)
            for (int y = 0; y < ho; ++y) {
              const int iy = y * stride_ + dy - pad_;
              if (iy < 0 || iy >= in_h_) continue;
              S* drow = dst + n * sp_in + static_cast<Eigen::Index>(iy) * in_w_;
              const S* srow = src + n * sp_out + static_cast<Eigen::Index>(y) * wo;
              for (int x = 0; x < wo; ++x) {
                const int ix = x * stride_ + dx - pad_;
                if (ix >= 0 && ix < in_w_) drow[ix] += srow[x];
              }
            }
        }
    }
  }

  int in_ch_, out_ch_, k_, stride_, pad_;
  int in_h_ = 0, in_w_ = 0;
  ParamTensor<S> weight_;
  Mat<S> cols_;
};

template <typename S>
class BatchNorm2d : public Layer<S> {
 public:
  BatchNorm2d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5)
      : name_(std::move(name)), ch_(channels), momentum_(momentum), eps_(eps) {
    gamma_.name = name_ + ".gamma";
    beta_.name = name_ + ".beta";
    gamma_.init_const(channels, 1, S(1));
    beta_.init_const(channels, 1, S(0));
    running_mean_ = Vec<S>::Zero(channels);
    running_var_ = Vec<S>::Ones(channels);
  }

  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    if (in.channels() != ch_) throw std::runtime_error("batchnorm: channel mismatch");
    out.resize(ch_, in.n, in.h, in.w);
    const auto m = static_cast<double>(in.data.cols());
    if (train) {
      Vec<S> mean = in.data.rowwise().mean();
      Vec<S> var(ch_);
      xhat_.resize(ch_, in.data.cols());
      invstd_.resize(ch_);
      for (int c = 0; c < ch_; ++c) {
        auto centered = in.data.row(c).array() - mean(c);
        var(c) = static_cast<S>(centered.square().sum() / m);
        invstd_(c) = S(1) / std::sqrt(var(c) + static_cast<S>(eps_));
        xhat_.row(c) = centered * invstd_(c);
        out.data.row(c) = xhat_.row(c).array() * gamma_.value(c, 0) + beta_.value(c, 0);
      }
      const S unbias = static_cast<S>(m > 1 ? m / (m - 1) : 1.0);
      const S mom = static_cast<S>(momentum_);
      running_mean_ = (S(1) - mom) * running_mean_ + mom * mean;
      running_var_ = (S(1) - mom) * running_var_ + mom * unbias * var;
      cached_cols_ = in.data.cols();
    } else {
      for (int c = 0; c < ch_; ++c) {
        S inv = S(1) / std::sqrt(running_var_(c) + static_cast<S>(eps_));
        out.data.row(c) =
            (in.data.row(c).array() - running_mean_(c)) * inv * gamma_.value(c, 0) +
            beta_.value(c, 0);
      }
      xhat_.resize(0, 0);
    }
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    if (xhat_.size() == 0) throw std::runtime_error("batchnorm: backward without train forward");
    grad_in.resize(ch_, grad_out.n, grad_out.h, grad_out.w);
    const auto m = static_cast<S>(cached_cols_);
    for (int c = 0; c < ch_; ++c) {
      auto g = grad_out.data.row(c).array();
      auto xh = xhat_.row(c).array();
      S sum_g = g.sum();
      S sum_gx = (g * xh).sum();
      gamma_.grad(c, 0) += sum_gx;
      beta_.grad(c, 0) += sum_g;
      grad_in.data.row(c) =
          (gamma_.value(c, 0) * invstd_(c) / m) * (m * g - sum_g - xh * sum_gx);
    }
  }

  void collect(ParamRefs<S>& params) override {
    params.push_back(&gamma_);
    params.push_back(&beta_);
  }

  void collect_state(StateRefs<S>& state) override {
    state.push_back({name_ + ".running_mean", &running_mean_});
    state.push_back({name_ + ".running_var", &running_var_});
  }

  Vec<S>& running_mean() { return running_mean_; }
  Vec<S>& running_var() { return running_var_; }

 private:
  std::string name_;
  int ch_;
  double momentum_, eps_;
  ParamTensor<S> gamma_, beta_;
  Vec<S> running_mean_, running_var_;
  Mat<S> xhat_;
  Vec<S> invstd_;
  Eigen::Index cached_cols_ = 0;
};

template <typename S>
class ReLU : public Layer<S> {
 public:
  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    out.resize(in.channels(), in.n, in.h, in.w);
    out.data = in.data.cwiseMax(S(0));
    if (train)
      mask_ = (in.data.array() > S(0)).template cast<S>();
    else
      mask_.resize(0, 0);
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    if (mask_.size() == 0) throw std::runtime_error("relu: backward without train forward");
    grad_in.resize(grad_out.channels(), grad_out.n, grad_out.h, grad_out.w);
    grad_in.data = grad_out.data.cwiseProduct(mask_);
  }

 private:
  Mat<S> mask_;
};

template <typename S>
class MaxPool2d : public Layer<S> {
 public:
  MaxPool2d(int kernel, int stride, int pad) : k_(kernel), stride_(stride), pad_(pad) {}

  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    in_h_ = in.h;
    in_w_ = in.w;
    const int ho = conv_out_dim(in.h, k_, stride_, pad_);
    const int wo = conv_out_dim(in.w, k_, stride_, pad_);
    out.resize(in.channels(), in.n, ho, wo);
    argmax_.resize(in.channels(), out.data.cols());
    const Eigen::Index sp_in = static_cast<Eigen::Index>(in.h) * in.w;
    const Eigen::Index sp_out = static_cast<Eigen::Index>(ho) * wo;
    for (int c = 0; c < in.channels(); ++c) {
      const S* src = in.data.row(c).data();
      S* dst = out.data.row(c).data();
      Eigen::Index* am = argmax_.row(c).data();
      for (int n = 0; n < in.n; ++n)
        for (int y = 0; y < ho; ++y)
          for (int x = 0; x < wo; ++x) {
            S best = std::numeric_limits<S>::lowest();
            Eigen::Index best_idx = -1;
            for (int dy = 0; dy < k_; ++dy) {
              const int iy = y * stride_ + dy - pad_;
              if (iy < 0 || iy >= in.h) continue;
              for (int dx = 0; dx < k_; ++dx) {
                const int ix = x * stride_ + dx - pad_;
                if (ix < 0 || ix >= in.w) continue;
                Eigen::Index idx = n * sp_in + static_cast<Eigen::Index>(iy) * in.w + ix;
                if (src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                }
              }
            }
            Eigen::Index o = n * sp_out + static_cast<Eigen::Index>(y) * wo + x;
            dst[o] = best;
            am[o] = best_idx;
          }
    }
    if (!train) argmax_.resize(0, 0);
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    if (argmax_.size() == 0) throw std::runtime_error("maxpool: backward without train forward");
    grad_in.resize(grad_out.channels(), grad_out.n, in_h_, in_w_);
    grad_in.data.setZero();
    for (int c = 0; c < grad_out.channels(); ++c) {
      const S* g = grad_out.data.row(c).data();
      const Eigen::Index* am = argmax_.row(c).data();
      S* d = grad_in.data.row(c).data();
      for (Eigen::Index j = 0; j < grad_out.data.cols(); ++j) d[am[j]] += g[j];
    }
  }

 private:
  int k_, stride_, pad_;
  int in_h_ = 0, in_w_ = 0;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_;
};

// Mean over the full h*w extent; output is [C x n] with h = w = 1.
template <typename S>
class GlobalAvgPool : public Layer<S> {
 public:
  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    sp_ = in.spatial();
    h_ = in.h;
    w_ = in.w;
    out.resize(in.channels(), in.n, 1, 1);
    for (int n = 0; n < in.n; ++n) out.data.col(n) = in.sample(n).rowwise().mean();
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    grad_in.resize(grad_out.channels(), grad_out.n, h_, w_);
    const S inv = S(1) / static_cast<S>(sp_);
    for (int n = 0; n < grad_out.n; ++n)
      grad_in.sample(n) = (grad_out.data.col(n) * inv).replicate(1, sp_);
  }

 private:
  Eigen::Index sp_ = 0;
  int h_ = 0, w_ = 0;
};

// Mean over the frequency (w) axis only: [C x n*h*w] -> [C x n*h], so the
// time axis survives for frame-level pooling.
template <typename S>
class FreqMeanPool : public Layer<S> {
 public:
  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    w_ = in.w;
    out.resize(in.channels(), in.n, in.h, 1);
    for (Eigen::Index f = 0; f < out.data.cols(); ++f)
      out.data.col(f) = in.data.middleCols(f * w_, w_).rowwise().mean();
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    grad_in.resize(grad_out.channels(), grad_out.n, grad_out.h, w_);
    const S inv = S(1) / static_cast<S>(w_);
    for (Eigen::Index f = 0; f < grad_out.data.cols(); ++f)
      grad_in.data.middleCols(f * w_, w_) = (grad_out.data.col(f) * inv).replicate(1, w_);
  }

 private:
  int w_ = 1;
};

template <typename S>
class Linear : public Layer<S> {
 public:
  Linear(std::string name, int in_dim, int out_dim, Rng rng) {
    weight_.name = name + ".weight";
    bias_.name = name + ".bias";
    weight_.weight_decay = true;
    weight_.init_normal(out_dim, in_dim, std::sqrt(1.0 / in_dim), rng);
    bias_.init_zero(out_dim, 1);
  }

  void forward(const Batch<S>& in, Batch<S>& out, bool train) override {
    if (in.h != 1 || in.w != 1) throw std::runtime_error("linear: expects pooled input");
    out.resize(static_cast<int>(weight_.value.rows()), in.n, 1, 1);
    out.data.noalias() = weight_.value * in.data;
    out.data.colwise() += bias_.value.col(0);
    if (train)
      input_ = in.data;
    else
      input_.resize(0, 0);
  }

  void backward(const Batch<S>& grad_out, Batch<S>& grad_in) override {
    if (input_.size() == 0) throw std::runtime_error("linear: backward without train forward");
    weight_.grad.noalias() += grad_out.data * input_.transpose();
    bias_.grad.col(0) += grad_out.data.rowwise().sum();
    grad_in.resize(static_cast<int>(weight_.value.cols()), grad_out.n, 1, 1);
    grad_in.data.noalias() = weight_.value.transpose() * grad_out.data;
  }

  void collect(ParamRefs<S>& params) override {
    params.push_back(&weight_);
    params.push_back(&bias_);
  }

 private:
  ParamTensor<S> weight_, bias_;
  Mat<S> input_;
};

}  // namespace tpv::nn

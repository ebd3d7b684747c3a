#pragma once
// Metric-learning losses over embedding batches.
//
// Angular prototypical: batches are N identities x M samples. For each
// identity the last sample is the query and the other M-1 form the
// prototype (their mean). Queries are scored against all prototypes by
// scaled cosine similarity and trained with cross-entropy against their
// own identity.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tpv/nn/tensor.hpp"

namespace tpv {

template <typename S>
class AngularProtoLoss {
 public:
  AngularProtoLoss() {
    scale_.name = "loss.scale";
    offset_.name = "loss.offset";
    scale_.init_const(1, 1, S(10));
    offset_.init_const(1, 1, S(-5));
  }

  void collect(nn::ParamRefs<S>& params) {
    params.push_back(&scale_);
    params.push_back(&offset_);
  }

  // Keep the similarity scale positive; call after each optimizer step.
  void clamp_scale(S floor = S(1e-6)) {
    if (scale_.value(0, 0) < floor) scale_.value(0, 0) = floor;
  }

  S scale() const { return scale_.value(0, 0); }
  S offset() const { return offset_.value(0, 0); }

  // E: [d x N*M], column i*M+k is sample k of identity i. Returns mean
  // cross-entropy; fills dE (same shape) when non-null and accumulates
  // parameter gradients. correct_out (optional) receives the count of
  // queries whose top-scoring prototype is their own.
  S forward_backward(const nn::Mat<S>& E, int N, int M, nn::Mat<S>* dE,
                     int* correct_out = nullptr) {
    if (N < 2) throw std::invalid_argument("angular prototypical loss needs >= 2 identities");
    if (M < 2) throw std::invalid_argument("angular prototypical loss needs >= 2 samples per identity");
    if (E.cols() != static_cast<Eigen::Index>(N) * M)
      throw std::invalid_argument("batch shape does not match N*M");
    const Eigen::Index d = E.rows();

    nn::Mat<S> Q(d, N), C(d, N);
    for (int i = 0; i < N; ++i) {
      Q.col(i) = E.col(static_cast<Eigen::Index>(i) * M + M - 1);
      C.col(i).setZero();
      for (int k = 0; k < M - 1; ++k) C.col(i) += E.col(static_cast<Eigen::Index>(i) * M + k);
      C.col(i) /= static_cast<S>(M - 1);
    }
    nn::Mat<S> Qh = Q, Ch = C;
    nn::Vec<S> qn = nn::l2_normalize_columns(Qh);
    nn::Vec<S> cn = nn::l2_normalize_columns(Ch);
    if (qn.minCoeff() <= S(0) || cn.minCoeff() <= S(0))
      throw std::runtime_error("zero-norm embedding in loss batch");

    const S w = scale_.value(0, 0);
    const S b = offset_.value(0, 0);
    nn::Mat<S> cos = Qh.transpose() * Ch;      // [N x N], row = query
    nn::Mat<S> logits = (cos.array() * w + b).matrix();

    S loss = S(0);
    int correct = 0;
    nn::Mat<S> P(N, N);
    for (int j = 0; j < N; ++j) {
      auto row = logits.row(j);
      const S peak = row.maxCoeff();
      nn::Vec<S> e = (row.array() - peak).exp();
      const S z = e.sum();
      P.row(j) = (e / z).transpose();
      loss += -(row(j) - peak - std::log(z));
      Eigen::Index best;
      row.maxCoeff(&best);
      if (best == j) ++correct;
    }
    loss /= static_cast<S>(N);
    if (correct_out) *correct_out = correct;
    if (!dE) return loss;

    nn::Mat<S> dlogits = P;
    for (int j = 0; j < N; ++j) dlogits(j, j) -= S(1);
    dlogits /= static_cast<S>(N);

    scale_.grad(0, 0) += dlogits.cwiseProduct(cos).sum();
    offset_.grad(0, 0) += dlogits.sum();

    nn::Mat<S> dcos = dlogits * w;
    nn::Mat<S> dQh = Ch * dcos.transpose();
    nn::Mat<S> dCh = Qh * dcos;
    nn::Mat<S> dQ = nn::l2_normalize_backward(Qh, qn, dQh);
    nn::Mat<S> dC = nn::l2_normalize_backward(Ch, cn, dCh);

    dE->resize(d, E.cols());
    dE->setZero();
    for (int i = 0; i < N; ++i) {
      dE->col(static_cast<Eigen::Index>(i) * M + M - 1) = dQ.col(i);
      for (int k = 0; k < M - 1; ++k)
        dE->col(static_cast<Eigen::Index>(i) * M + k) = dC.col(i) / static_cast<S>(M - 1);
    }
    return loss;
  }

 private:
  nn::ParamTensor<S> scale_, offset_;
};

// Plain classifier head: logits = W e + b, cross-entropy over identities.
template <typename S>
class SoftmaxClassifierLoss {
 public:
  SoftmaxClassifierLoss(int n_classes, int dim, Rng rng) {
    W_.name = "loss.cls.W";
    b_.name = "loss.cls.b";
    W_.weight_decay = true;
    W_.init_normal(n_classes, dim, std::sqrt(1.0 / dim), rng);
    b_.init_zero(n_classes, 1);
  }

  void collect(nn::ParamRefs<S>& params) {
    params.push_back(&W_);
    params.push_back(&b_);
  }

  S forward_backward(const nn::Mat<S>& E, const std::vector<int>& labels, nn::Mat<S>* dE,
                     int* correct_out = nullptr) {
    const Eigen::Index B = E.cols();
    if (static_cast<Eigen::Index>(labels.size()) != B)
      throw std::invalid_argument("classifier loss: label count mismatch");
    nn::Mat<S> logits = W_.value * E;
    logits.colwise() += b_.value.col(0);
    S loss = S(0);
    int correct = 0;
    nn::Mat<S> P(logits.rows(), B);
    for (Eigen::Index j = 0; j < B; ++j) {
      const int y = labels[j];
      if (y < 0 || y >= logits.rows()) throw std::invalid_argument("classifier loss: bad label");
      auto col = logits.col(j);
      const S peak = col.maxCoeff();
      nn::Vec<S> e = (col.array() - peak).exp();
      const S z = e.sum();
      P.col(j) = e / z;
      loss += -(col(y) - peak - std::log(z));
      Eigen::Index best;
      col.maxCoeff(&best);
      if (best == y) ++correct;
    }
    loss /= static_cast<S>(B);
    if (correct_out) *correct_out = correct;
    if (!dE) return loss;
    nn::Mat<S> dlogits = P;
    for (Eigen::Index j = 0; j < B; ++j) dlogits(labels[j], j) -= S(1);
    dlogits /= static_cast<S>(B);
    W_.grad.noalias() += dlogits * E.transpose();
    b_.grad.col(0) += dlogits.rowwise().sum();
    dE->resize(E.rows(), B);
    dE->noalias() = W_.value.transpose() * dlogits;
    return loss;
  }

 private:
  nn::ParamTensor<S> W_, b_;
};

}  // namespace tpv

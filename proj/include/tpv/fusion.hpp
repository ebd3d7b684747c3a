#pragma once
// Embedding-level attention fusion and score-level averaging.
//
// Attention fusion concatenates the (normalized) modality embeddings,
// projects them to one logit per modality, softmaxes into weights, and
// forms the weighted sum. The fused embedding is L2-renormalized before
// scoring so every system's scores live on the same [0,2] chordal scale.

#include <map>
#include <stdexcept>
#include <vector>

#include "tpv/core.hpp"
#include "tpv/nn/tensor.hpp"

namespace tpv {

struct FusionWeights {
  Eigen::VectorXd alpha;

  void validate(double tol = 1e-6) const {
    if (alpha.size() < 2) throw std::invalid_argument("fusion weights need >= 2 entries");
    if (alpha.minCoeff() < 0) throw std::invalid_argument("fusion weights must be nonnegative");
    if (std::abs(alpha.sum() - 1.0) > tol)
      throw std::invalid_argument("fusion weights must sum to 1");
  }
};

template <typename S>
struct AttentionFusionParamsT {
  nn::ParamTensor<S> W, b;

  void init(int m, int embed_dim, const std::string& name = "fusion") {
    if (m < 2 || m > 3) throw std::invalid_argument("attention fusion supports 2 or 3 modalities");
    W.name = name + ".W";
    b.name = name + ".b";
    W.weight_decay = true;
    W.init_zero(m, static_cast<Eigen::Index>(m) * embed_dim);
    b.init_zero(m, 1);
  }

  int modalities() const { return static_cast<int>(W.value.rows()); }
  int embed_dim() const { return static_cast<int>(W.value.cols() / W.value.rows()); }

  void collect(nn::ParamRefs<S>& params) {
    params.push_back(&W);
    params.push_back(&b);
  }

  void validate() const {
    const auto m = W.value.rows();
    if (m < 2 || m > 3) throw std::invalid_argument("attention fusion supports 2 or 3 modalities");
    if (W.value.cols() != m * embed_dim() || b.value.rows() != m)
      throw std::invalid_argument("attention fusion parameter shapes are inconsistent");
  }
};

using AttentionFusionParams = AttentionFusionParamsT<double>;

namespace detail {

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace detail

// embeddings must be ordered (audio, visual[, thermal]); each L2-normalized.
inline std::pair<Embedding, FusionWeights> attention_fuse(
    const std::vector<Embedding>& embeddings, const AttentionFusionParams& params) {
  params.validate();
  const int m = params.modalities();
  const int d = params.embed_dim();
  if (static_cast<int>(embeddings.size()) != m)
    throw std::invalid_argument("attention_fuse: modality count mismatch");
  Eigen::VectorXd concat(static_cast<Eigen::Index>(m) * d);
  for (int i = 0; i < m; ++i) {
    if (embeddings[i].vector.size() != d)
      throw std::invalid_argument("attention_fuse: embedding dimension mismatch");
    concat.segment(static_cast<Eigen::Index>(i) * d, d) = embeddings[i].vector;
  }
  Eigen::VectorXd logits = params.W.value * concat + params.b.value.col(0);
  if (!logits.allFinite()) throw std::runtime_error("attention_fuse: non-finite attention scores");
  FusionWeights w{detail::softmax(logits)};
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < m; ++i) pooled += w.alpha(i) * embeddings[i].vector;
  Embedding fused = make_embedding(pooled, Modality::fused, embeddings.front().sample_id);
  return {std::move(fused), std::move(w)};
}

inline double verification_score(const Embedding& e1, const Embedding& e2, double norm_tol = 1e-4) {
  if (e1.modality != e2.modality)
    throw std::invalid_argument("verification_score: modality tags differ");
  if (e1.vector.size() != e2.vector.size())
    throw std::invalid_argument("verification_score: dimension mismatch");
  if (std::abs(e1.vector.norm() - 1.0) > norm_tol || std::abs(e2.vector.norm() - 1.0) > norm_tol)
    throw std::invalid_argument("verification_score: embeddings must be L2-normalized");
  const double s = (e1.vector - e2.vector).norm();
  return std::clamp(s, 0.0, 2.0);
}

inline double average_scores(const std::map<Modality, double>& per_modality) {
  if (per_modality.empty()) throw std::invalid_argument("average_scores: empty score map");
  double sum = 0;
  for (const auto& [mod, s] : per_modality) {
    if (s < 0 || s > 2) throw std::invalid_argument("average_scores: score outside [0,2]");
    sum += s;
  }
  return sum / static_cast<double>(per_modality.size());
}

// Trainable batched form used by joint training. Inputs are raw (not yet
// normalized) per-modality embeddings, one column per batch element.
template <typename S>
class AttentionFuser {
 public:
  explicit AttentionFuser(AttentionFusionParamsT<S>* params) : p_(params) {}

  // embs[i]: [d x B]. out: [d x B] fused (unnormalized weighted sum of
  // normalized inputs).
  void forward(const std::vector<nn::Mat<S>>& embs, nn::Mat<S>& out, bool train) {
    const int m = p_->modalities();
    const int d = p_->embed_dim();
    if (static_cast<int>(embs.size()) != m)
      throw std::invalid_argument("fuser: modality count mismatch");
    const Eigen::Index B = embs[0].cols();
    for (const auto& e : embs)
      if (e.rows() != d || e.cols() != B) throw std::invalid_argument("fuser: shape mismatch");
    normed_ = embs;
    norms_.resize(m);
    for (int i = 0; i < m; ++i) norms_[i] = nn::l2_normalize_columns(normed_[i]);
    concat_.resize(static_cast<Eigen::Index>(m) * d, B);
    for (int i = 0; i < m; ++i)
      concat_.middleRows(static_cast<Eigen::Index>(i) * d, d) = normed_[i];
    logits_.noalias() = p_->W.value * concat_;
    logits_.colwise() += p_->b.value.col(0);
    alpha_.resize(m, B);
    for (Eigen::Index j = 0; j < B; ++j) {
      Eigen::Matrix<S, Eigen::Dynamic, 1> z = logits_.col(j);
      z.array() -= z.maxCoeff();
      Eigen::Matrix<S, Eigen::Dynamic, 1> e = z.array().exp();
      alpha_.col(j) = e / e.sum();
    }
    out.resize(d, B);
    out.setZero();
    for (int i = 0; i < m; ++i)
      out += normed_[i] * alpha_.row(i).asDiagonal();
    cached_ = train;
  }

  // dout: [d x B] gradient w.r.t. fused output. dembs[i] receives the
  // gradient w.r.t. the raw modality embeddings.
  void backward(const nn::Mat<S>& dout, std::vector<nn::Mat<S>>& dembs) {
    if (!cached_) throw std::runtime_error("fuser: backward without train forward");
    const int m = p_->modalities();
    const int d = p_->embed_dim();
    const Eigen::Index B = dout.cols();
    dembs.assign(m, nn::Mat<S>::Zero(d, B));
    nn::Mat<S> dlogits(m, B);
    for (Eigen::Index j = 0; j < B; ++j) {
      Eigen::Matrix<S, Eigen::Dynamic, 1> dalpha(m);
      for (int i = 0; i < m; ++i) dalpha(i) = normed_[i].col(j).dot(dout.col(j));
      Eigen::Matrix<S, Eigen::Dynamic, 1> a = alpha_.col(j);
      dlogits.col(j) = a.cwiseProduct(dalpha - Eigen::Matrix<S, Eigen::Dynamic, 1>::Constant(
                                                   m, a.dot(dalpha)));
    }
    p_->W.grad.noalias() += dlogits * concat_.transpose();
    p_->b.grad.col(0) += dlogits.rowwise().sum();
    nn::Mat<S> dconcat = p_->W.value.transpose() * dlogits;
    for (int i = 0; i < m; ++i) {
      nn::Mat<S> dnormed = dout * alpha_.row(i).asDiagonal();
      dnormed += dconcat.middleRows(static_cast<Eigen::Index>(i) * d, d);
      dembs[i] = nn::l2_normalize_backward(normed_[i], norms_[i], dnormed);
    }
  }

  const nn::Mat<S>& weights() const { return alpha_; }

 private:
  AttentionFusionParamsT<S>* p_;
  bool cached_ = false;
  std::vector<nn::Mat<S>> normed_;
  std::vector<nn::Vec<S>> norms_;
  nn::Mat<S> concat_, logits_, alpha_;
};

}  // namespace tpv

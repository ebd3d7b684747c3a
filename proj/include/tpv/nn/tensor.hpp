#pragma once
// Small tensor conventions shared by all layers. A feature-map batch is one
// channel-major matrix: data(c, (n*h + y)*w + x). That makes convolution a
// single GEMM against im2col columns and batch-norm a row-wise reduction.
// Everything is templated on the scalar so training runs in float while
// finite-difference gradient checks instantiate the same code in double.

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpv/rng.hpp"

namespace tpv::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Batch {
  Mat<S> data;  // [channels x (n*h*w)]
  int n = 0, h = 0, w = 0;

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index spatial() const { return static_cast<Eigen::Index>(h) * w; }

  void resize(int c, int n_, int h_, int w_) {
    n = n_;
    h = h_;
    w = w_;
    data.resize(c, static_cast<Eigen::Index>(n_) * h_ * w_);
  }

  // View of one sample: [channels x h*w].
  auto sample(int i) { return data.middleCols(static_cast<Eigen::Index>(i) * spatial(), spatial()); }
  auto sample(int i) const {
    return data.middleCols(static_cast<Eigen::Index>(i) * spatial(), spatial());
  }
};

template <typename S>
struct ParamTensor {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool weight_decay = false;

  void init_zero(Eigen::Index rows, Eigen::Index cols) {
    value = Mat<S>::Zero(rows, cols);
    grad = Mat<S>::Zero(rows, cols);
  }

  void init_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng rng) {
    value.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        value(r, c) = static_cast<S>(rng.normal(0.0, stddev));
    grad = Mat<S>::Zero(rows, cols);
  }

  void init_const(Eigen::Index rows, Eigen::Index cols, S v) {
    value = Mat<S>::Constant(rows, cols, v);
    grad = Mat<S>::Zero(rows, cols);
  }

  Eigen::Index size() const { return value.size(); }
};

template <typename S>
using ParamRefs = std::vector<ParamTensor<S>*>;

template <typename S>
inline void zero_grads(const ParamRefs<S>& params) {
  for (auto* p : params) p->grad.setZero();
}

template <typename S>
inline std::size_t count_params(const ParamRefs<S>& params) {
  std::size_t n = 0;
  for (auto* p : params) n += static_cast<std::size_t>(p->size());
  return n;
}

template <typename S>
inline bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

// L2-normalize columns in place; returns the original norms.
template <typename S>
inline Vec<S> l2_normalize_columns(Mat<S>& m) {
  Vec<S> norms(m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    S n = m.col(c).norm();
    norms(c) = n;
    if (n > S(0)) m.col(c) /= n;
  }
  return norms;
}

// Backward of column-wise L2 normalization: given y = x/|x| and dL/dy,
// dL/dx = (g - y * (y . g)) / |x|.
template <typename S>
inline Mat<S> l2_normalize_backward(const Mat<S>& normalized, const Vec<S>& norms,
                                    const Mat<S>& grad_out) {
  Mat<S> dx(normalized.rows(), normalized.cols());
  for (Eigen::Index c = 0; c < normalized.cols(); ++c) {
    S dot = normalized.col(c).dot(grad_out.col(c));
    dx.col(c) = (grad_out.col(c) - normalized.col(c) * dot) / norms(c);
  }
  return dx;
}

}  // namespace tpv::nn

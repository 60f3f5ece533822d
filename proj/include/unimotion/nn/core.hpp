#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "unimotion/rng.hpp"
#include "unimotion/types.hpp"

namespace unimotion::nn {

/// Shape metadata for a batch of sequences stacked row-wise: row b*seq + t
/// holds timestep t of window b.
struct BatchLayout {
  Index batch = 0;
  Index seq = 0;
  BoolArray padded;  // (batch*seq), true where the timestep is padding

  Index rows() const { return batch * seq; }
};

template <typename Scalar>
struct TensorRef {
  std::string name;
  Scalar* data;
  Index rows, cols;

  Index size() const { return rows * cols; }
};

template <typename Scalar, typename Model>
std::vector<TensorRef<Scalar>> collect_tensors(Model& m) {
  std::vector<TensorRef<Scalar>> out;
  m.visit("", [&](const std::string& name, Scalar* d, Index r, Index c) {
    out.push_back({name, d, r, c});
  });
  return out;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) *
                     Scalar(0.3989422804014326779);  // 1/sqrt(2*pi)
  return cdf + x * pdf;
}

template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

/// Row-wise softmax in place, numerically stabilized.
template <typename Scalar>
void softmax_rows(Matrix<Scalar>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const Scalar mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

/// Inverted dropout. Returns the output and fills `mask` with the kept/scaled
/// factors so backward is an element-wise product. p <= 0 is a passthrough
/// with an empty mask.
template <typename Scalar>
Matrix<Scalar> dropout(const Matrix<Scalar>& x, double p, Rng& rng,
                       Matrix<Scalar>& mask) {
  if (p <= 0.0) {
    mask.resize(0, 0);
    return x;
  }
  const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
  mask.resize(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i)
      mask(i, j) = rng.uniform() < p ? Scalar(0) : keep_scale;
  return x.cwiseProduct(mask);
}

template <typename Scalar>
Matrix<Scalar> dropout_backward(const Matrix<Scalar>& dy,
                                const Matrix<Scalar>& mask) {
  if (mask.size() == 0) return dy;
  return dy.cwiseProduct(mask);
}

template <typename Scalar>
void glorot_uniform(Matrix<Scalar>& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i)
      w(i, j) = static_cast<Scalar>(rng.uniform(-limit, limit));
}

}  // namespace unimotion::nn

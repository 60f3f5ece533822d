#pragma once

#include <string>

#include "unimotion/nn/core.hpp"

namespace unimotion::nn {

/// Dense layer y = x * W + b. Gradients of a layer are stored in a second
/// instance of the same type, paired with the model by tensor order.
template <typename Scalar>
struct Linear {
  Matrix<Scalar> weight;    // in x out
  RowVector<Scalar> bias;   // 1 x out

  void init(Index in, Index out, Rng& rng) {
    weight.resize(in, out);
    glorot_uniform(weight, rng);
    bias = RowVector<Scalar>::Zero(out);
  }

  void init_zero(Index in, Index out) {
    weight = Matrix<Scalar>::Zero(in, out);
    bias = RowVector<Scalar>::Zero(out);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) const {
    Matrix<Scalar> y = x * weight;
    y.rowwise() += bias;
    return y;
  }

  /// Accumulates parameter gradients into `g`, returns dL/dx.
  Matrix<Scalar> backward(const Matrix<Scalar>& input, const Matrix<Scalar>& dy,
                          Linear& g) const {
    g.weight.noalias() += input.transpose() * dy;
    g.bias += dy.colwise().sum();
    return dy * weight.transpose();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight.data(), weight.rows(), weight.cols());
    f(prefix + ".bias", bias.data(), Index(1), bias.size());
  }
};

/// Row-wise layer normalization with learnable gain and bias.
template <typename Scalar>
struct LayerNorm {
  RowVector<Scalar> gain, bias;
  static constexpr Scalar kEps = Scalar(1e-5);

  struct Cache {
    Matrix<Scalar> xhat;
    Vector<Scalar> inv_std;
  };

  void init(Index dim) {
    gain = RowVector<Scalar>::Ones(dim);
    bias = RowVector<Scalar>::Zero(dim);
  }

  // gradient-accumulator layout: both tensors zero
  void init_zero(Index dim) {
    gain = RowVector<Scalar>::Zero(dim);
    bias = RowVector<Scalar>::Zero(dim);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, Cache* cache = nullptr) const {
    const Index n = x.rows(), d = x.cols();
    Matrix<Scalar> xhat(n, d);
    Vector<Scalar> inv_std(n);
    for (Index i = 0; i < n; ++i) {
      const Scalar mean = x.row(i).mean();
      const Scalar var = (x.row(i).array() - mean).square().sum() / Scalar(d);
      inv_std[i] = Scalar(1) / std::sqrt(var + kEps);
      xhat.row(i) = (x.row(i).array() - mean) * inv_std[i];
    }
    Matrix<Scalar> y = xhat.array().rowwise() * gain.array();
    y.rowwise() += bias;
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Matrix<Scalar> backward(const Cache& c, const Matrix<Scalar>& dy,
                          LayerNorm& g) const {
    const Index n = dy.rows(), d = dy.cols();
    g.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    g.bias += dy.colwise().sum();
    Matrix<Scalar> dx(n, d);
    for (Index i = 0; i < n; ++i) {
      const auto dxhat = (dy.row(i).array() * gain.array()).matrix();
      const Scalar s1 = dxhat.sum();
      const Scalar s2 = (dxhat.array() * c.xhat.row(i).array()).sum();
      dx.row(i) = (c.inv_std[i] / Scalar(d)) *
                  (Scalar(d) * dxhat.array() - s1 - c.xhat.row(i).array() * s2);
    }
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain.data(), Index(1), gain.size());
    f(prefix + ".bias", bias.data(), Index(1), bias.size());
  }
};

}  // namespace unimotion::nn

#pragma once

#include <vector>

#include "unimotion/nn/layers.hpp"

namespace unimotion::nn {

/// Multi-head self-attention over stacked windows. Padded timesteps are
/// excluded as keys via additive masking; every attention row therefore sums
/// to 1 over the non-padded keys.
template <typename Scalar>
struct MultiHeadAttention {
  Index heads = 0;
  Linear<Scalar> q, k, v, o;

  struct Cache {
    Matrix<Scalar> input;              // (B*T) x H
    Matrix<Scalar> Q, K, V;            // (B*T) x H
    std::vector<Matrix<Scalar>> probs; // per (b*heads + h): T x T
    Matrix<Scalar> attn_out;           // (B*T) x H, input to the out projection
  };

  void init(Index hidden, Index n_heads, Rng& rng) {
    heads = n_heads;
    q.init(hidden, hidden, rng);
    k.init(hidden, hidden, rng);
    v.init(hidden, hidden, rng);
    o.init(hidden, hidden, rng);
  }

  void init_zero(Index hidden, Index n_heads) {
    heads = n_heads;
    q.init_zero(hidden, hidden);
    k.init_zero(hidden, hidden);
    v.init_zero(hidden, hidden);
    o.init_zero(hidden, hidden);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, const BatchLayout& lay,
                         Cache* cache = nullptr) const {
    const Index hidden = x.cols();
    const Index dh = hidden / heads;
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    Matrix<Scalar> Q = q.forward(x), K = k.forward(x), V = v.forward(x);
    Matrix<Scalar> attn_out(x.rows(), hidden);
    std::vector<Matrix<Scalar>> probs;
    if (cache) probs.reserve(static_cast<size_t>(lay.batch * heads));

    for (Index b = 0; b < lay.batch; ++b) {
      const Index r0 = b * lay.seq;
      for (Index h = 0; h < heads; ++h) {
        const Index c0 = h * dh;
        Matrix<Scalar> scores =
            Q.block(r0, c0, lay.seq, dh) * K.block(r0, c0, lay.seq, dh).transpose() * scale;
        for (Index j = 0; j < lay.seq; ++j)
          if (lay.padded[r0 + j]) scores.col(j).setConstant(Scalar(-1e9));
        softmax_rows(scores);
        attn_out.block(r0, c0, lay.seq, dh).noalias() =
            scores * V.block(r0, c0, lay.seq, dh);
        if (cache) probs.push_back(std::move(scores));
      }
    }
    Matrix<Scalar> y = o.forward(attn_out);
    if (cache) {
      cache->input = x;
      cache->Q = std::move(Q);
      cache->K = std::move(K);
      cache->V = std::move(V);
      cache->probs = std::move(probs);
      cache->attn_out = std::move(attn_out);
    }
    return y;
  }

  Matrix<Scalar> backward(const Cache& c, const Matrix<Scalar>& dy,
                          const BatchLayout& lay, MultiHeadAttention& g) const {
    const Index hidden = c.input.cols();
    const Index dh = hidden / heads;
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    Matrix<Scalar> d_attn_out = o.backward(c.attn_out, dy, g.o);
    Matrix<Scalar> dQ = Matrix<Scalar>::Zero(c.Q.rows(), c.Q.cols());
    Matrix<Scalar> dK = Matrix<Scalar>::Zero(c.K.rows(), c.K.cols());
    Matrix<Scalar> dV = Matrix<Scalar>::Zero(c.V.rows(), c.V.cols());

    for (Index b = 0; b < lay.batch; ++b) {
      const Index r0 = b * lay.seq;
      for (Index h = 0; h < heads; ++h) {
        const Index c0 = h * dh;
        const Matrix<Scalar>& P = c.probs[static_cast<size_t>(b * heads + h)];
        const auto dOh = d_attn_out.block(r0, c0, lay.seq, dh);
        dV.block(r0, c0, lay.seq, dh).noalias() = P.transpose() * dOh;
        Matrix<Scalar> dP = dOh * c.V.block(r0, c0, lay.seq, dh).transpose();
        // softmax backward: dS = P .* (dP - rowsum(dP .* P))
        Matrix<Scalar> dS(lay.seq, lay.seq);
        for (Index i = 0; i < lay.seq; ++i) {
          const Scalar dot = dP.row(i).dot(P.row(i));
          dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)) * scale;
        }
        dQ.block(r0, c0, lay.seq, dh).noalias() = dS * c.K.block(r0, c0, lay.seq, dh);
        dK.block(r0, c0, lay.seq, dh).noalias() =
            dS.transpose() * c.Q.block(r0, c0, lay.seq, dh);
      }
    }
    Matrix<Scalar> dx = q.backward(c.input, dQ, g.q);
    dx += k.backward(c.input, dK, g.k);
    dx += v.backward(c.input, dV, g.v);
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    q.visit(prefix + ".q", f);
    k.visit(prefix + ".k", f);
    v.visit(prefix + ".v", f);
    o.visit(prefix + ".o", f);
  }
};

}  // namespace unimotion::nn

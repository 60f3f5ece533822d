#pragma once

#include <vector>

#include "unimotion/nn/attention.hpp"

namespace unimotion::nn {

/// Pre-activation transformer encoder block:
///   x = x + Drop(Attn(LN1(x)))
///   x = x + Drop(FF2(gelu(FF1(LN2(x)))))
template <typename Scalar>
struct EncoderBlock {
  LayerNorm<Scalar> ln1, ln2;
  MultiHeadAttention<Scalar> attn;
  Linear<Scalar> ff1, ff2;

  struct Cache {
    typename LayerNorm<Scalar>::Cache ln1c, ln2c;
    typename MultiHeadAttention<Scalar>::Cache attnc;
    Matrix<Scalar> ln2_out, gelu_in, gelu_out;
    Matrix<Scalar> drop1, drop2;
  };

  void init(Index hidden, Index ff_dim, Index heads, Rng& rng) {
    ln1.init(hidden);
    ln2.init(hidden);
    attn.init(hidden, heads, rng);
    ff1.init(hidden, ff_dim, rng);
    ff2.init(ff_dim, hidden, rng);
  }

  void init_zero(Index hidden, Index ff_dim, Index heads) {
    ln1.init_zero(hidden);
    ln2.init_zero(hidden);
    attn.init_zero(hidden, heads);
    ff1.init_zero(hidden, ff_dim);
    ff2.init_zero(ff_dim, hidden);
  }

  /// `p_drop` > 0 requires an rng (training mode); pass 0 for inference.
  Matrix<Scalar> forward(const Matrix<Scalar>& x, const BatchLayout& lay,
                         double p_drop, Rng* rng, Cache* cache = nullptr) const {
    Matrix<Scalar> drop_mask1, drop_mask2;
    Matrix<Scalar> a = attn.forward(ln1.forward(x, cache ? &cache->ln1c : nullptr),
                                    lay, cache ? &cache->attnc : nullptr);
    if (p_drop > 0) a = dropout(a, p_drop, *rng, drop_mask1);
    Matrix<Scalar> x1 = x + a;

    Matrix<Scalar> ln2_out = ln2.forward(x1, cache ? &cache->ln2c : nullptr);
    Matrix<Scalar> gelu_in = ff1.forward(ln2_out);
    Matrix<Scalar> gelu_out = gelu(gelu_in);
    Matrix<Scalar> f = ff2.forward(gelu_out);
    if (p_drop > 0) f = dropout(f, p_drop, *rng, drop_mask2);

    if (cache) {
      cache->ln2_out = std::move(ln2_out);
      cache->gelu_in = std::move(gelu_in);
      cache->gelu_out = std::move(gelu_out);
      cache->drop1 = std::move(drop_mask1);
      cache->drop2 = std::move(drop_mask2);
    }
    return x1 + f;
  }

  Matrix<Scalar> backward(const Cache& c, const Matrix<Scalar>& dy,
                          const BatchLayout& lay, EncoderBlock& g) const {
    // feed-forward branch
    Matrix<Scalar> df = dropout_backward(dy, c.drop2);
    Matrix<Scalar> d_gelu_out = ff2.backward(c.gelu_out, df, g.ff2);
    Matrix<Scalar> d_gelu_in =
        d_gelu_out.cwiseProduct(c.gelu_in.unaryExpr([](Scalar v) { return gelu_grad(v); }));
    Matrix<Scalar> d_ln2_out = ff1.backward(c.ln2_out, d_gelu_in, g.ff1);
    Matrix<Scalar> dx1 = dy + ln2.backward(c.ln2c, d_ln2_out, g.ln2);

    // attention branch
    Matrix<Scalar> da = dropout_backward(dx1, c.drop1);
    Matrix<Scalar> d_ln1_out = attn.backward(c.attnc, da, lay, g.attn);
    return dx1 + ln1.backward(c.ln1c, d_ln1_out, g.ln1);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    attn.visit(prefix + ".attn", f);
    ln2.visit(prefix + ".ln2", f);
    ff1.visit(prefix + ".ff1", f);
    ff2.visit(prefix + ".ff2", f);
  }
};

/// Stack of encoder blocks with a final layer norm.
template <typename Scalar>
struct TransformerStack {
  std::vector<EncoderBlock<Scalar>> blocks;
  LayerNorm<Scalar> final_ln;

  struct Cache {
    std::vector<typename EncoderBlock<Scalar>::Cache> block_caches;
    typename LayerNorm<Scalar>::Cache final_lnc;
    /// attention probabilities per (layer, window, head), row-stochastic
    const Matrix<Scalar>& attention(Index layer, Index window, Index head,
                                    Index heads) const {
      return block_caches[static_cast<size_t>(layer)]
          .attnc.probs[static_cast<size_t>(window * heads + head)];
    }
  };

  void init(Index layers, Index hidden, Index ff_dim, Index heads, Rng& rng) {
    blocks.resize(static_cast<size_t>(layers));
    for (auto& b : blocks) b.init(hidden, ff_dim, heads, rng);
    final_ln.init(hidden);
  }

  void init_zero(Index layers, Index hidden, Index ff_dim, Index heads) {
    blocks.resize(static_cast<size_t>(layers));
    for (auto& b : blocks) b.init_zero(hidden, ff_dim, heads);
    final_ln.init_zero(hidden);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, const BatchLayout& lay,
                         double p_drop, Rng* rng, Cache* cache = nullptr) const {
    if (cache) cache->block_caches.resize(blocks.size());
    Matrix<Scalar> h = x;
    for (size_t i = 0; i < blocks.size(); ++i)
      h = blocks[i].forward(h, lay, p_drop, rng,
                            cache ? &cache->block_caches[i] : nullptr);
    return final_ln.forward(h, cache ? &cache->final_lnc : nullptr);
  }

  Matrix<Scalar> backward(const Cache& c, const Matrix<Scalar>& dy,
                          const BatchLayout& lay, TransformerStack& g) const {
    Matrix<Scalar> dh = final_ln.backward(c.final_lnc, dy, g.final_ln);
    for (size_t i = blocks.size(); i-- > 0;)
      dh = blocks[i].backward(c.block_caches[i], dh, lay, g.blocks[i]);
    return dh;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit(prefix + ".block" + std::to_string(i), f);
    final_ln.visit(prefix + ".final_ln", f);
  }
};

}  // namespace unimotion::nn

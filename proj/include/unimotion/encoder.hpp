#pragma once

#include <span>
#include <vector>

#include "unimotion/errors.hpp"
#include "unimotion/masking.hpp"
#include "unimotion/nn/adam.hpp"
#include "unimotion/nn/transformer.hpp"
#include "unimotion/signal.hpp"

namespace unimotion {

struct EncoderConfig {
  Index hidden_dim = 72;
  Index ff_dim = 144;
  Index attn_heads = 4;
  Index encoder_layers = 2;
  Index seq_len = kWindowLen;
  Index in_channels = kNumChannels;
  double dropout = 0.1;
  // ablation toggles (input-encoding row of the ablation table)
  bool nucleus_encoding = true;
  bool axis_encoding = true;

  void validate() const {
    if (hidden_dim <= 0 || attn_heads <= 0 || hidden_dim % attn_heads != 0)
      throw InvalidConfig("EncoderConfig: hidden_dim must divide by attn_heads");
    if (encoder_layers < 1) throw InvalidConfig("EncoderConfig: encoder_layers >= 1");
    if (ff_dim <= 0 || seq_len <= 0 || in_channels <= 0)
      throw InvalidConfig("EncoderConfig: dims must be positive");
    if (dropout < 0 || dropout >= 1)
      throw InvalidConfig("EncoderConfig: dropout must be in [0,1)");
  }
};

/// Fixed sinusoidal positional table, seq x hidden.
template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Index seq, Index hidden) {
  Matrix<Scalar> table(seq, hidden);
  for (Index t = 0; t < seq; ++t) {
    for (Index i = 0; i < hidden; i += 2) {
      const double rate = std::pow(10000.0, static_cast<double>(i) / hidden);
      table(t, i) = static_cast<Scalar>(std::sin(t / rate));
      if (i + 1 < hidden) table(t, i + 1) = static_cast<Scalar>(std::cos(t / rate));
    }
  }
  return table;
}

/// Per-window context the embeddings need: nucleus membership and the
/// significant gyroscope axis, both computed on the unmasked window.
struct WindowAnnotation {
  BoolArray in_nucleus;
  int axis_index = 0;
};

template <typename Scalar>
WindowAnnotation annotate(const IMUWindow<Scalar>& w,
                          const NucleusConfig<Scalar>& cfg) {
  const auto nucleus = detect_nucleus(compute_energy(w), cfg, w.pad_mask);
  return {nucleus.in_nucleus, significant_axis(w, nucleus).axis_index};
}

template <typename Scalar>
nn::BatchLayout build_layout(std::span<const IMUWindow<Scalar>> windows) {
  nn::BatchLayout lay;
  lay.batch = static_cast<Index>(windows.size());
  lay.seq = windows.empty() ? 0 : windows[0].len();
  lay.padded = BoolArray::Constant(lay.rows(), false);
  for (Index b = 0; b < lay.batch; ++b) {
    if (windows[static_cast<size_t>(b)].len() != lay.seq)
      throw InvalidInput("build_layout: mixed window lengths");
    lay.padded.segment(b * lay.seq, lay.seq) =
        windows[static_cast<size_t>(b)].pad_mask;
  }
  return lay;
}

template <typename Scalar>
Matrix<Scalar> stack_inputs(std::span<const IMUWindow<Scalar>> windows) {
  if (windows.empty()) throw InvalidInput("stack_inputs: empty batch");
  const Index seq = windows[0].len();
  Matrix<Scalar> x(static_cast<Index>(windows.size()) * seq, kNumChannels);
  for (size_t b = 0; b < windows.size(); ++b)
    x.middleRows(static_cast<Index>(b) * seq, seq) = windows[b].samples;
  return x;
}

/// Stage-1 model: input encodings, transformer stack, reconstruction head.
template <typename Scalar>
struct Encoder {
  EncoderConfig cfg;
  nn::Linear<Scalar> in_proj;     // channels -> hidden
  Matrix<Scalar> nucleus_emb;     // 2 x hidden, row 0 = outside, row 1 = inside
  Matrix<Scalar> axis_emb;        // 3 x hidden
  nn::TransformerStack<Scalar> stack;
  nn::Linear<Scalar> head1;       // hidden -> hidden
  nn::LayerNorm<Scalar> head_ln;
  nn::Linear<Scalar> head2;       // hidden -> channels
  Matrix<Scalar> pos_table;       // fixed, not a parameter

  void init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    cfg = config;
    in_proj.init(cfg.in_channels, cfg.hidden_dim, rng);
    nucleus_emb.resize(2, cfg.hidden_dim);
    axis_emb.resize(3, cfg.hidden_dim);
    for (Index j = 0; j < cfg.hidden_dim; ++j) {
      for (Index i = 0; i < 2; ++i) nucleus_emb(i, j) = Scalar(rng.normal(0, 0.02));
      for (Index i = 0; i < 3; ++i) axis_emb(i, j) = Scalar(rng.normal(0, 0.02));
    }
    stack.init(cfg.encoder_layers, cfg.hidden_dim, cfg.ff_dim, cfg.attn_heads, rng);
    head1.init(cfg.hidden_dim, cfg.hidden_dim, rng);
    head_ln.init(cfg.hidden_dim);
    head2.init(cfg.hidden_dim, cfg.in_channels, rng);
    pos_table = sinusoidal_positions<Scalar>(cfg.seq_len, cfg.hidden_dim);
  }

  void init_zero(const EncoderConfig& config) {
    config.validate();
    cfg = config;
    in_proj.init_zero(cfg.in_channels, cfg.hidden_dim);
    nucleus_emb = Matrix<Scalar>::Zero(2, cfg.hidden_dim);
    axis_emb = Matrix<Scalar>::Zero(3, cfg.hidden_dim);
    stack.init_zero(cfg.encoder_layers, cfg.hidden_dim, cfg.ff_dim, cfg.attn_heads);
    head1.init_zero(cfg.hidden_dim, cfg.hidden_dim);
    head_ln.init_zero(cfg.hidden_dim);
    head2.init_zero(cfg.hidden_dim, cfg.in_channels);
    pos_table = sinusoidal_positions<Scalar>(cfg.seq_len, cfg.hidden_dim);
  }

  struct EmbedCache {
    Matrix<Scalar> raw;             // (B*T) x channels
    BoolArray nucleus_rows;         // (B*T)
    std::vector<int> axes;          // per window
  };

  /// E = E_input + E_position + E_nucleus + E_sig_axis. The axis vector is
  /// added only at nucleus timesteps.
  Matrix<Scalar> embed(const Matrix<Scalar>& raw, const nn::BatchLayout& lay,
                       std::span<const WindowAnnotation> annos,
                       EmbedCache* cache = nullptr) const {
    if (raw.rows() != lay.rows() || raw.cols() != cfg.in_channels ||
        lay.seq != cfg.seq_len ||
        annos.size() != static_cast<size_t>(lay.batch))
      throw InvalidInput("embed: shape mismatch");
    Matrix<Scalar> e = in_proj.forward(raw);
    BoolArray nucleus_rows = BoolArray::Constant(lay.rows(), false);
    std::vector<int> axes(annos.size());
    for (Index b = 0; b < lay.batch; ++b) {
      const auto& a = annos[static_cast<size_t>(b)];
      if (a.in_nucleus.size() != lay.seq)
        throw InvalidInput("embed: nucleus mask length mismatch");
      axes[static_cast<size_t>(b)] = a.axis_index;
      auto rows = e.middleRows(b * lay.seq, lay.seq);
      rows += pos_table;
      for (Index t = 0; t < lay.seq; ++t) {
        const bool in = a.in_nucleus[t];
        nucleus_rows[b * lay.seq + t] = in;
        if (cfg.nucleus_encoding) rows.row(t) += nucleus_emb.row(in ? 1 : 0);
        if (cfg.axis_encoding && in) rows.row(t) += axis_emb.row(a.axis_index);
      }
    }
    if (cache) {
      cache->raw = raw;
      cache->nucleus_rows = std::move(nucleus_rows);
      cache->axes = std::move(axes);
    }
    return e;
  }

  void embed_backward(const EmbedCache& c, const nn::BatchLayout& lay,
                      const Matrix<Scalar>& d_embed, Encoder& g) const {
    in_proj.backward(c.raw, d_embed, g.in_proj);
    if (cfg.nucleus_encoding) {
      for (Index r = 0; r < lay.rows(); ++r)
        g.nucleus_emb.row(c.nucleus_rows[r] ? 1 : 0) += d_embed.row(r);
    }
    if (cfg.axis_encoding) {
      for (Index b = 0; b < lay.batch; ++b) {
        const int axis = c.axes[static_cast<size_t>(b)];
        for (Index t = 0; t < lay.seq; ++t)
          if (c.nucleus_rows[b * lay.seq + t])
            g.axis_emb.row(axis) += d_embed.row(b * lay.seq + t);
      }
    }
  }

  struct Cache {
    EmbedCache embedc;
    typename nn::TransformerStack<Scalar>::Cache stackc;
    Matrix<Scalar> hidden;      // stack output
    Matrix<Scalar> head_in;     // input to head1 (equals hidden on the full path)
    typename nn::LayerNorm<Scalar>::Cache head_lnc;
    Matrix<Scalar> gelu_in, gelu_out;
  };

  /// Motion embeddings (B*T) x hidden.
  Matrix<Scalar> encode(const Matrix<Scalar>& raw, const nn::BatchLayout& lay,
                        std::span<const WindowAnnotation> annos, double p_drop,
                        Rng* rng, Cache* cache = nullptr) const {
    Matrix<Scalar> e = embed(raw, lay, annos, cache ? &cache->embedc : nullptr);
    Matrix<Scalar> h = stack.forward(e, lay, p_drop, rng, cache ? &cache->stackc : nullptr);
    if (cache) cache->hidden = h;
    return h;
  }

  /// Reconstruction head: linear, layer norm, GELU, then projection back to
  /// the channel dimension.
  Matrix<Scalar> reconstruct(const Matrix<Scalar>& hidden,
                             Cache* cache = nullptr) const {
    Matrix<Scalar> h1 = head1.forward(hidden);
    Matrix<Scalar> ln = head_ln.forward(h1, cache ? &cache->head_lnc : nullptr);
    Matrix<Scalar> act = nn::gelu(ln);
    Matrix<Scalar> recon = head2.forward(act);
    if (cache) {
      cache->head_in = hidden;
      cache->gelu_in = std::move(ln);
      cache->gelu_out = std::move(act);
    }
    return recon;
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& raw, const nn::BatchLayout& lay,
                         std::span<const WindowAnnotation> annos, double p_drop,
                         Rng* rng, Cache* cache = nullptr) const {
    return reconstruct(encode(raw, lay, annos, p_drop, rng, cache), cache);
  }

  /// Backward from d(reconstruction); accumulates parameter grads into g.
  void backward(const Cache& c, const nn::BatchLayout& lay,
                const Matrix<Scalar>& d_recon, Encoder& g) const {
    Matrix<Scalar> d_embed = backward_to_embedding(c, lay, d_recon, g);
    embed_backward(c.embedc, lay, d_embed, g);
  }

  /// Backward through head + stack only, returning d(embedding); used by the
  /// classifier which shares the embedding backward.
  Matrix<Scalar> backward_to_embedding(const Cache& c, const nn::BatchLayout& lay,
                                       const Matrix<Scalar>& d_recon,
                                       Encoder& g) const {
    Matrix<Scalar> d_act = head2.backward(c.gelu_out, d_recon, g.head2);
    Matrix<Scalar> d_ln =
        d_act.cwiseProduct(c.gelu_in.unaryExpr([](Scalar v) { return nn::gelu_grad(v); }));
    Matrix<Scalar> d_h1 = head_ln.backward(c.head_lnc, d_ln, g.head_ln);
    Matrix<Scalar> d_hidden = head1.backward(c.head_in, d_h1, g.head1);
    return stack.backward(c.stackc, d_hidden, lay, g.stack);
  }

  /// Backward for the encode() path (no reconstruction head).
  void encode_backward(const Cache& c, const nn::BatchLayout& lay,
                       const Matrix<Scalar>& d_hidden, Encoder& g) const {
    Matrix<Scalar> d_embed = stack.backward(c.stackc, d_hidden, lay, g.stack);
    embed_backward(c.embedc, lay, d_embed, g);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    in_proj.visit(prefix + "in_proj", f);
    f(prefix + "nucleus_emb", nucleus_emb.data(), nucleus_emb.rows(), nucleus_emb.cols());
    f(prefix + "axis_emb", axis_emb.data(), axis_emb.rows(), axis_emb.cols());
    stack.visit(prefix + "stack", f);
    head1.visit(prefix + "head1", f);
    head_ln.visit(prefix + "head_ln", f);
    head2.visit(prefix + "head2", f);
  }

  static Encoder zeros_like(const Encoder& other) {
    Encoder g;
    g.init_zero(other.cfg);
    return g;
  }
};

/// Mean squared error over the masked timesteps of one window (Eq.-style sum
/// normalized by masked element count).
template <typename Scalar>
Scalar pretrain_loss(const Matrix<Scalar>& recon, const Matrix<Scalar>& target,
                     const MaskPlan& plan) {
  if (plan.total() == 0) throw EmptyMask("pretrain_loss: empty mask set");
  if (target.rows() != plan.total() || target.cols() != recon.cols())
    throw InvalidInput("pretrain_loss: target shape mismatch");
  Scalar sum = 0;
  Index row = 0;
  for (Index t = 0; t < plan.masked.size(); ++t) {
    if (!plan.masked[t]) continue;
    sum += (recon.row(t) - target.row(row)).squaredNorm();
    ++row;
  }
  return sum / Scalar(plan.total() * recon.cols());
}

/// Batched masked-MSE over stacked windows; fills d_recon with the gradient.
template <typename Scalar>
Scalar masked_mse_with_grad(const Matrix<Scalar>& recon,
                            const std::vector<MaskedWindow<Scalar>>& masked,
                            const nn::BatchLayout& lay, Matrix<Scalar>* d_recon) {
  Index total_elems = 0;
  for (const auto& mw : masked) total_elems += mw.target.size();
  if (total_elems == 0) throw EmptyMask("masked_mse: no masked elements in batch");
  if (d_recon) *d_recon = Matrix<Scalar>::Zero(recon.rows(), recon.cols());
  Scalar sum = 0;
  for (Index b = 0; b < lay.batch; ++b) {
    const auto& mw = masked[static_cast<size_t>(b)];
    for (size_t i = 0; i < mw.indices.size(); ++i) {
      const Index r = b * lay.seq + mw.indices[i];
      const auto diff = (recon.row(r) - mw.target.row(static_cast<Index>(i))).eval();
      sum += diff.squaredNorm();
      if (d_recon) d_recon->row(r) = Scalar(2) * diff / Scalar(total_elems);
    }
  }
  return sum / Scalar(total_elems);
}

}  // namespace unimotion

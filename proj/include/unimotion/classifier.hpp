#pragma once

#include <span>
#include <vector>

#include "unimotion/encoder.hpp"
#include "unimotion/text.hpp"

namespace unimotion {

struct ClassifierConfig {
  Index attn_heads = 4;
  Index layers = 2;
  Index hidden_dim = 72;      // must match the encoder
  Index projection_dim = 32;
  Index num_classes = 0;
  double tau = 0.1;
  double dropout = 0.1;
  bool use_transformer = true;  // false: pooled 2-layer MLP head (ablation)
  bool freeze_encoder = false;

  void validate() const {
    if (hidden_dim <= 0 || attn_heads <= 0 || hidden_dim % attn_heads != 0)
      throw InvalidConfig("ClassifierConfig: hidden_dim must divide by attn_heads");
    if (num_classes < 2) throw InvalidConfig("ClassifierConfig: need >= 2 classes");
    if (projection_dim < 1) throw InvalidConfig("ClassifierConfig: projection_dim >= 1");
    if (tau <= 0) throw InvalidConfig("ClassifierConfig: tau must be positive");
    if (layers < 1) throw InvalidConfig("ClassifierConfig: layers >= 1");
  }
};

/// Auxiliary loss weights ramping linearly per epoch.
struct LossWeights {
  double w_s_start = 0.1, w_s_max = 0.3;
  double w_c_start = 0.1, w_c_max = 0.5;

  std::pair<double, double> at(Index epoch, Index total_epochs) const {
    if (total_epochs <= 1) return {w_s_max, w_c_max};
    const double a = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    return {w_s_start + (w_s_max - w_s_start) * a,
            w_c_start + (w_c_max - w_c_start) * a};
  }
};

inline double total_loss(double classification, double semantic, double contrastive,
                         double w_s, double w_c) {
  return classification + w_s * semantic + w_c * contrastive;
}

/// Mean cross-entropy with stable log-sum-exp. Fills dlogits when given.
template <typename Scalar>
Scalar classification_loss(const Matrix<Scalar>& logits,
                           const std::vector<int>& labels,
                           Matrix<Scalar>* dlogits = nullptr) {
  const Index n = logits.rows(), k = logits.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw InvalidInput("classification_loss: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw InvalidInput("classification_loss: label out of range");
  if (dlogits) dlogits->resize(n, k);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    RowVector<Scalar> p = (logits.row(i).array() - mx).exp();
    const Scalar z = p.sum();
    p /= z;
    total += std::log(z) + mx - logits(i, labels[static_cast<size_t>(i)]);
    if (dlogits) {
      dlogits->row(i) = p / Scalar(n);
      (*dlogits)(i, labels[static_cast<size_t>(i)]) -= Scalar(1) / Scalar(n);
    }
  }
  return total / Scalar(n);
}

/// Hinge on pairwise feature distances with per-class-pair weights and
/// margins; ordered different-label pairs, mean form. Same-class pairs
/// contribute zero through the weight diagonal convention.
template <typename Scalar>
Scalar semantic_loss(const Matrix<Scalar>& f, const std::vector<int>& labels,
                     const SemanticTable<Scalar>& table,
                     Matrix<Scalar>* df = nullptr) {
  const Index n = f.rows();
  if (static_cast<Index>(labels.size()) != n)
    throw InvalidInput("semantic_loss: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= table.num_classes())
      throw InvalidInput("semantic_loss: label outside the semantic table");
  if (df) *df = Matrix<Scalar>::Zero(n, f.cols());

  Index pairs = 0;
  Scalar sum = 0;
  std::vector<std::tuple<Index, Index, Scalar>> active;  // (i, j, w/d)
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const int yi = labels[static_cast<size_t>(i)];
      const int yj = labels[static_cast<size_t>(j)];
      if (yi == yj) continue;
      ++pairs;
      const Scalar d = (f.row(i) - f.row(j)).norm();
      const Scalar hinge = table.margin(yi, yj) - d;
      if (hinge <= 0) continue;
      const Scalar w = table.weight(yi, yj);
      sum += w * hinge;
      if (df && d > Scalar(1e-12)) active.emplace_back(i, j, w / d);
    }
  }
  if (pairs == 0) return Scalar(0);
  if (df) {
    for (const auto& [i, j, scale] : active) {
      const RowVector<Scalar> dir = (f.row(i) - f.row(j)) * (scale / Scalar(pairs));
      df->row(i) -= dir;
      df->row(j) += dir;
    }
  }
  return sum / Scalar(pairs);
}

/// Supervised contrastive loss over normalized projections: anchors average
/// their positives, denominators run over every other sample. Anchors with
/// no positive are skipped; a batch with none throws DegenerateBatch.
template <typename Scalar>
Scalar contrastive_loss(const Matrix<Scalar>& z, const std::vector<int>& labels,
                        Scalar tau, Matrix<Scalar>* dz = nullptr) {
  const Index n = z.rows();
  if (static_cast<Index>(labels.size()) != n)
    throw InvalidInput("contrastive_loss: label count mismatch");
  if (tau <= 0) throw InvalidConfig("contrastive_loss: tau must be positive");

  std::vector<std::vector<Index>> positives(static_cast<size_t>(n));
  Index anchors = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j)
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
        positives[static_cast<size_t>(i)].push_back(j);
    if (!positives[static_cast<size_t>(i)].empty()) ++anchors;
  }
  if (anchors == 0)
    throw DegenerateBatch("contrastive_loss: no anchor has a same-class partner");

  const Matrix<Scalar> sims = z * z.transpose() / tau;
  if (dz) *dz = Matrix<Scalar>::Zero(n, z.cols());
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const auto& pos = positives[static_cast<size_t>(i)];
    if (pos.empty()) continue;
    // softmax over j != i
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, sims(i, j));
    Vector<Scalar> a = Vector<Scalar>::Zero(n);
    Scalar denom = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      a[j] = std::exp(sims(i, j) - mx);
      denom += a[j];
    }
    a /= denom;

    Scalar li = 0;
    for (Index p : pos) li += -(sims(i, p) - mx - std::log(denom));
    total += li / Scalar(pos.size());

    if (dz) {
      for (Index j = 0; j < n; ++j) {
        if (j == i) continue;
        Scalar coeff = a[j];
        for (Index p : pos)
          if (p == j) coeff -= Scalar(1) / Scalar(pos.size());
        coeff /= tau * Scalar(anchors);
        dz->row(i) += coeff * z.row(j);
        dz->row(j) += coeff * z.row(i);
      }
    }
  }
  return total / Scalar(anchors);
}

/// Stage-2 model: pretrained encoder (trainable), classifier transformer with
/// mean pooling (or pooled MLP in the ablation), classification head, and a
/// normalized projection head feeding the contrastive loss.
template <typename Scalar>
struct GestureClassifier {
  ClassifierConfig ccfg;
  Encoder<Scalar> encoder;
  nn::TransformerStack<Scalar> cls_stack;
  nn::Linear<Scalar> mlp1, mlp2;  // ablation head
  nn::Linear<Scalar> cls_head;
  nn::Linear<Scalar> proj1, proj2;

  void init(const Encoder<Scalar>& pretrained, const ClassifierConfig& config,
            Rng& rng) {
    config.validate();
    if (config.hidden_dim != pretrained.cfg.hidden_dim)
      throw IncompatibleCheckpoint("classifier hidden_dim differs from encoder");
    ccfg = config;
    encoder = pretrained;
    if (ccfg.use_transformer) {
      cls_stack.init(ccfg.layers, ccfg.hidden_dim, 2 * ccfg.hidden_dim,
                     ccfg.attn_heads, rng);
      mlp1.init_zero(1, 1);
      mlp2.init_zero(1, 1);
    } else {
      mlp1.init(ccfg.hidden_dim, ccfg.hidden_dim, rng);
      mlp2.init(ccfg.hidden_dim, ccfg.hidden_dim, rng);
    }
    cls_head.init(ccfg.hidden_dim, ccfg.num_classes, rng);
    proj1.init(ccfg.hidden_dim, ccfg.hidden_dim, rng);
    proj2.init(ccfg.hidden_dim, ccfg.projection_dim, rng);
  }

  void init_zero(const EncoderConfig& enc_cfg, const ClassifierConfig& config) {
    ccfg = config;
    encoder.init_zero(enc_cfg);
    if (ccfg.use_transformer)
      cls_stack.init_zero(ccfg.layers, ccfg.hidden_dim, 2 * ccfg.hidden_dim,
                          ccfg.attn_heads);
    mlp1.init_zero(ccfg.use_transformer ? 1 : ccfg.hidden_dim,
                   ccfg.use_transformer ? 1 : ccfg.hidden_dim);
    mlp2.init_zero(ccfg.use_transformer ? 1 : ccfg.hidden_dim,
                   ccfg.use_transformer ? 1 : ccfg.hidden_dim);
    cls_head.init_zero(ccfg.hidden_dim, ccfg.num_classes);
    proj1.init_zero(ccfg.hidden_dim, ccfg.hidden_dim);
    proj2.init_zero(ccfg.hidden_dim, ccfg.projection_dim);
  }

  static GestureClassifier zeros_like(const GestureClassifier& other) {
    GestureClassifier g;
    g.init_zero(other.encoder.cfg, other.ccfg);
    return g;
  }

  struct Cache {
    typename Encoder<Scalar>::Cache encc;
    typename nn::TransformerStack<Scalar>::Cache clsc;
    Matrix<Scalar> pooled_in;   // (B*T) x H rows feeding the pooling
    Matrix<Scalar> pooled;      // B x H
    Matrix<Scalar> mlp_in1, mlp_in2;  // gelu inputs on the ablation path
    Matrix<Scalar> f;           // B x H
    Matrix<Scalar> proj_gelu_in, proj_gelu_out;
    Matrix<Scalar> z_pre;       // before normalization
    Vector<Scalar> z_norms;
  };

  struct Output {
    Matrix<Scalar> f;       // B x H pooled features
    Matrix<Scalar> z;       // B x P, unit rows
    Matrix<Scalar> logits;  // B x K
  };

  static Matrix<Scalar> mean_pool(const Matrix<Scalar>& x, const nn::BatchLayout& lay) {
    Matrix<Scalar> pooled = Matrix<Scalar>::Zero(lay.batch, x.cols());
    for (Index b = 0; b < lay.batch; ++b) {
      Index valid = 0;
      for (Index t = 0; t < lay.seq; ++t) {
        if (lay.padded[b * lay.seq + t]) continue;
        pooled.row(b) += x.row(b * lay.seq + t);
        ++valid;
      }
      if (valid > 0) pooled.row(b) /= Scalar(valid);
    }
    return pooled;
  }

  Output forward(const Matrix<Scalar>& raw, const nn::BatchLayout& lay,
                 std::span<const WindowAnnotation> annos, double p_drop,
                 Rng* rng, Cache* cache = nullptr) const {
    Matrix<Scalar> motion =
        encoder.encode(raw, lay, annos, p_drop, rng, cache ? &cache->encc : nullptr);
    Matrix<Scalar> f;
    if (ccfg.use_transformer) {
      Matrix<Scalar> h = cls_stack.forward(motion, lay, p_drop, rng,
                                           cache ? &cache->clsc : nullptr);
      f = mean_pool(h, lay);
      if (cache) {
        cache->pooled_in = std::move(h);
        cache->pooled = f;
      }
    } else {
      Matrix<Scalar> pooled = mean_pool(motion, lay);
      Matrix<Scalar> a1 = mlp1.forward(pooled);
      Matrix<Scalar> h1 = nn::gelu(a1);
      Matrix<Scalar> a2 = mlp2.forward(h1);
      f = nn::gelu(a2);
      if (cache) {
        cache->pooled = std::move(pooled);
        cache->mlp_in1 = std::move(a1);
        cache->mlp_in2 = std::move(a2);
        cache->pooled_in = h1;  // input to mlp2
      }
    }

    Output out;
    out.logits = cls_head.forward(f);
    Matrix<Scalar> p1 = proj1.forward(f);
    Matrix<Scalar> pg = nn::gelu(p1);
    Matrix<Scalar> u = proj2.forward(pg);
    Vector<Scalar> norms = u.rowwise().norm().cwiseMax(Scalar(1e-12));
    out.z = u.array().colwise() / norms.array();
    out.f = f;
    if (cache) {
      cache->f = f;
      cache->proj_gelu_in = std::move(p1);
      cache->proj_gelu_out = std::move(pg);
      cache->z_pre = std::move(u);
      cache->z_norms = std::move(norms);
    }
    return out;
  }

  /// Backward from the three loss gradients; accumulates into g.
  void backward(const Cache& c, const nn::BatchLayout& lay,
                const Matrix<Scalar>& dlogits, const Matrix<Scalar>& df_loss,
                const Matrix<Scalar>& dz, GestureClassifier& g) const {
    Matrix<Scalar> df = cls_head.backward(c.f, dlogits, g.cls_head);
    if (df_loss.size() > 0) df += df_loss;

    if (dz.size() > 0) {
      // z = u / ||u||: du = (dz - z (z . dz)) / ||u||
      const Index n = dz.rows();
      Matrix<Scalar> du(n, dz.cols());
      for (Index i = 0; i < n; ++i) {
        const RowVector<Scalar> zi = c.z_pre.row(i) / c.z_norms[i];
        const Scalar dot = zi.dot(dz.row(i));
        du.row(i) = (dz.row(i) - dot * zi) / c.z_norms[i];
      }
      Matrix<Scalar> dpg = proj2.backward(c.proj_gelu_out, du, g.proj2);
      Matrix<Scalar> dp1 = dpg.cwiseProduct(
          c.proj_gelu_in.unaryExpr([](Scalar v) { return nn::gelu_grad(v); }));
      df += proj1.backward(c.f, dp1, g.proj1);
    }

    Matrix<Scalar> d_motion;
    if (ccfg.use_transformer) {
      // un-pool, then back through the classifier stack
      Matrix<Scalar> dh = Matrix<Scalar>::Zero(lay.rows(), df.cols());
      for (Index b = 0; b < lay.batch; ++b) {
        Index valid = 0;
        for (Index t = 0; t < lay.seq; ++t)
          if (!lay.padded[b * lay.seq + t]) ++valid;
        if (valid == 0) continue;
        const RowVector<Scalar> share = df.row(b) / Scalar(valid);
        for (Index t = 0; t < lay.seq; ++t)
          if (!lay.padded[b * lay.seq + t]) dh.row(b * lay.seq + t) = share;
      }
      d_motion = cls_stack.backward(c.clsc, dh, lay, g.cls_stack);
    } else {
      Matrix<Scalar> da2 = df.cwiseProduct(
          c.mlp_in2.unaryExpr([](Scalar v) { return nn::gelu_grad(v); }));
      Matrix<Scalar> dh1 = mlp2.backward(c.pooled_in, da2, g.mlp2);
      Matrix<Scalar> da1 = dh1.cwiseProduct(
          c.mlp_in1.unaryExpr([](Scalar v) { return nn::gelu_grad(v); }));
      Matrix<Scalar> d_pooled = mlp1.backward(c.pooled, da1, g.mlp1);
      d_motion = Matrix<Scalar>::Zero(lay.rows(), d_pooled.cols());
      for (Index b = 0; b < lay.batch; ++b) {
        Index valid = 0;
        for (Index t = 0; t < lay.seq; ++t)
          if (!lay.padded[b * lay.seq + t]) ++valid;
        if (valid == 0) continue;
        const RowVector<Scalar> share = d_pooled.row(b) / Scalar(valid);
        for (Index t = 0; t < lay.seq; ++t)
          if (!lay.padded[b * lay.seq + t]) d_motion.row(b * lay.seq + t) = share;
      }
    }
    if (!ccfg.freeze_encoder)
      encoder.encode_backward(c.encc, lay, d_motion, g.encoder);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    encoder.visit(prefix + "encoder.", f);
    if (ccfg.use_transformer)
      cls_stack.visit(prefix + "cls_stack", f);
    else {
      mlp1.visit(prefix + "mlp1", f);
      mlp2.visit(prefix + "mlp2", f);
    }
    cls_head.visit(prefix + "cls_head", f);
    proj1.visit(prefix + "proj1", f);
    proj2.visit(prefix + "proj2", f);
  }
};

}  // namespace unimotion

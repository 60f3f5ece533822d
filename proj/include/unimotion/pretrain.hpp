#pragma once

#include <algorithm>
#include <limits>
#include <span>
#include <vector>

#include "unimotion/checkpoint.hpp"
#include "unimotion/data.hpp"
#include "unimotion/encoder.hpp"
#include "unimotion/nn/adam.hpp"

namespace unimotion {

template <typename T, typename S>
NucleusConfig<T> cast_nucleus_config(const NucleusConfig<S>& c) {
  NucleusConfig<T> out;
  out.delta_t = c.delta_t;
  if (c.motion_thresh) out.motion_thresh = static_cast<T>(*c.motion_thresh);
  out.min_gap = c.min_gap;
  out.min_region = c.min_region;
  return out;
}

struct PretrainConfig {
  double lr = 1e-3;
  Index batch_size = 128;
  Index max_epochs = 3200;
  Index patience = 50;
  uint64_t seed = 0;
  MaskConfig mask;                     // rng_seed ignored; streams derive from seed
  NucleusConfig<double> nucleus;

  void validate() const {
    mask.validate();
    nucleus.validate();
    if (batch_size < 1 || max_epochs < 1 || patience < 0)
      throw InvalidConfig("PretrainConfig: bad sizes");
  }
};

template <typename Scalar>
struct PretrainState {
  Encoder<Scalar> model;
  nn::Adam<Scalar> optimizer;
  Index epoch = 0;  // epochs completed so far
  double best_val_loss = std::numeric_limits<double>::infinity();
  Index patience_used = 0;
  uint64_t rng_seed = 0;

  struct CurvePoint {
    Index epoch;
    double train_loss;
    double val_loss;
  };
  std::vector<CurvePoint> history;
};

namespace detail {

template <typename Scalar>
struct MaskedBatch {
  std::vector<MaskedWindow<Scalar>> masked;
  std::vector<WindowAnnotation> annos;
  nn::BatchLayout lay;
  Matrix<Scalar> raw;
};

template <typename Scalar>
MaskedBatch<Scalar> assemble_masked_batch(
    std::span<const IMUWindow<Scalar>> windows,
    std::span<const WindowAnnotation> annos,
    std::span<const NucleusMask> nuclei, std::span<const size_t> indices,
    const MaskConfig& mask_cfg, uint64_t seed, uint64_t epoch) {
  MaskedBatch<Scalar> b;
  const Index seq = windows[indices[0]].len();
  b.lay.batch = static_cast<Index>(indices.size());
  b.lay.seq = seq;
  b.lay.padded = BoolArray::Constant(b.lay.rows(), false);
  b.raw.resize(b.lay.rows(), kNumChannels);
  for (size_t i = 0; i < indices.size(); ++i) {
    const size_t w = indices[i];
    Rng rng = Rng::derive(seed, 0x6d61736b, epoch, w);
    auto plan = plan_masks(nuclei[w], windows[w].pad_mask, mask_cfg, rng);
    b.masked.push_back(apply_masks(windows[w], plan));
    b.annos.push_back(annos[w]);
    b.lay.padded.segment(static_cast<Index>(i) * seq, seq) = windows[w].pad_mask;
    b.raw.middleRows(static_cast<Index>(i) * seq, seq) =
        b.masked.back().window.samples;
  }
  return b;
}

}  // namespace detail

/// Reconstruction MSE of a model on held-out windows under the given plans;
/// nucleus_only restricts the error to masked positions inside the nucleus.
template <typename Scalar>
double eval_reconstruction_mse(const Encoder<Scalar>& model,
                               std::span<const IMUWindow<Scalar>> windows,
                               std::span<const WindowAnnotation> annos,
                               std::span<const MaskPlan> plans,
                               bool nucleus_only = false, Index chunk = 64) {
  double sum = 0;
  long count = 0;
  for (size_t start = 0; start < windows.size(); start += static_cast<size_t>(chunk)) {
    const size_t n = std::min<size_t>(chunk, windows.size() - start);
    const Index seq = windows[start].len();
    nn::BatchLayout lay;
    lay.batch = static_cast<Index>(n);
    lay.seq = seq;
    lay.padded = BoolArray::Constant(lay.rows(), false);
    Matrix<Scalar> raw(lay.rows(), kNumChannels);
    std::vector<MaskedWindow<Scalar>> masked;
    std::vector<WindowAnnotation> batch_annos;
    for (size_t i = 0; i < n; ++i) {
      const size_t w = start + i;
      masked.push_back(apply_masks(windows[w], plans[w]));
      batch_annos.push_back(annos[w]);
      lay.padded.segment(static_cast<Index>(i) * seq, seq) = windows[w].pad_mask;
      raw.middleRows(static_cast<Index>(i) * seq, seq) = masked.back().window.samples;
    }
    auto recon = model.forward(raw, lay, batch_annos, 0.0, nullptr);
    for (size_t i = 0; i < n; ++i) {
      const auto& mw = masked[i];
      for (size_t m = 0; m < mw.indices.size(); ++m) {
        const Index t = mw.indices[m];
        if (nucleus_only && !batch_annos[i].in_nucleus[t]) continue;
        const Index r = static_cast<Index>(i) * seq + t;
        sum += (recon.row(r) - mw.target.row(static_cast<Index>(m)))
                   .template cast<double>()
                   .squaredNorm();
        count += kNumChannels;
      }
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

/// Stage-1 training: Adam on the masked-reconstruction objective with a fresh
/// mask plan per window per epoch, 80/10/10 split, early stopping on the
/// validation loss, best-validation parameters kept.
template <typename Scalar>
PretrainState<Scalar> pretrain(std::span<const IMUWindow<Scalar>> windows,
                               const EncoderConfig& enc_cfg,
                               const PretrainConfig& cfg,
                               PretrainState<Scalar>* resume = nullptr) {
  cfg.validate();
  enc_cfg.validate();
  if (static_cast<Index>(windows.size()) < cfg.batch_size)
    throw InvalidInput("pretrain: corpus smaller than one batch");

  // nucleus and axis annotations come from the unmasked windows, once
  const auto ncfg = cast_nucleus_config<Scalar>(cfg.nucleus);
  std::vector<NucleusMask> nuclei;
  std::vector<WindowAnnotation> annos;
  nuclei.reserve(windows.size());
  for (const auto& w : windows) {
    nuclei.push_back(detect_nucleus(compute_energy(w), ncfg, w.pad_mask));
    annos.push_back({nuclei.back().in_nucleus,
                     significant_axis(w, nuclei.back()).axis_index});
  }

  SplitSpec split_spec;
  split_spec.mode = SplitMode::kPretrain801010;
  split_spec.seed = cfg.seed;
  const Splits splits = make_splits(windows.size(), {}, split_spec);

  PretrainState<Scalar> state;
  if (resume) {
    state = std::move(*resume);
  } else {
    Rng init_rng = Rng::derive(cfg.seed, 0x1a17);
    state.model.init(enc_cfg, init_rng);
    state.optimizer.lr = cfg.lr;
    state.optimizer.init(nn::collect_tensors<Scalar>(state.model));
    state.rng_seed = cfg.seed;
  }

  Encoder<Scalar> grads = Encoder<Scalar>::zeros_like(state.model);
  auto param_refs = nn::collect_tensors<Scalar>(state.model);
  auto grad_refs = nn::collect_tensors<Scalar>(grads);
  auto zero_grads = [&] {
    for (auto& t : grad_refs)
      Eigen::Map<Vector<Scalar>>(t.data, t.size()).setZero();
  };

  // fixed validation plans keep the early-stopping signal comparable
  std::vector<MaskPlan> val_plans(windows.size());
  for (size_t w : splits.val) {
    Rng rng = Rng::derive(cfg.seed, 0x76616c, w);
    val_plans[w] = plan_masks(nuclei[w], windows[w].pad_mask, cfg.mask, rng);
  }
  std::vector<IMUWindow<Scalar>> val_windows;
  std::vector<WindowAnnotation> val_annos;
  std::vector<MaskPlan> val_sel_plans;
  for (size_t w : splits.val) {
    val_windows.push_back(windows[w]);
    val_annos.push_back(annos[w]);
    val_sel_plans.push_back(val_plans[w]);
  }

  Encoder<Scalar> best_model = state.model;
  const bool has_val = !val_windows.empty();

  for (Index epoch = state.epoch; epoch < cfg.max_epochs; ++epoch) {
    std::vector<size_t> order = splits.train;
    Rng order_rng = Rng::derive(cfg.seed, 0x6f72646, static_cast<uint64_t>(epoch));
    order_rng.shuffle(order);

    double train_loss_sum = 0;
    long train_batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t n = std::min<size_t>(cfg.batch_size, order.size() - start);
      auto batch = detail::assemble_masked_batch<Scalar>(
          windows, annos, nuclei, std::span(order).subspan(start, n), cfg.mask,
          cfg.seed, static_cast<uint64_t>(epoch));
      zero_grads();
      typename Encoder<Scalar>::Cache cache;
      Rng drop_rng = Rng::derive(cfg.seed, 0x64726f70, static_cast<uint64_t>(epoch),
                                 start);
      auto recon = state.model.forward(batch.raw, batch.lay, batch.annos,
                                       state.model.cfg.dropout, &drop_rng, &cache);
      Matrix<Scalar> d_recon;
      const Scalar loss = masked_mse_with_grad(recon, batch.masked, batch.lay, &d_recon);
      state.model.backward(cache, batch.lay, d_recon, grads);
      state.optimizer.step(param_refs, grad_refs);
      train_loss_sum += static_cast<double>(loss);
      ++train_batches;
    }
    const double train_loss = train_loss_sum / std::max(1L, train_batches);

    double val_loss = train_loss;
    if (has_val)
      val_loss = eval_reconstruction_mse<Scalar>(state.model, val_windows, val_annos,
                                                 val_sel_plans);
    state.epoch = epoch + 1;
    state.history.push_back({state.epoch, train_loss, val_loss});

    if (val_loss < state.best_val_loss) {
      state.best_val_loss = val_loss;
      state.patience_used = 0;
      best_model = state.model;
    } else if (++state.patience_used > cfg.patience) {
      break;
    }
  }
  state.model = best_model;
  return state;
}

// --- checkpoint round trip ----------------------------------------------

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"hidden_dim", c.hidden_dim},     {"ff_dim", c.ff_dim},
          {"attn_heads", c.attn_heads},     {"encoder_layers", c.encoder_layers},
          {"seq_len", c.seq_len},           {"in_channels", c.in_channels},
          {"dropout", c.dropout},           {"nucleus_encoding", c.nucleus_encoding},
          {"axis_encoding", c.axis_encoding}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.hidden_dim = j.at("hidden_dim").get<Index>();
  c.ff_dim = j.at("ff_dim").get<Index>();
  c.attn_heads = j.at("attn_heads").get<Index>();
  c.encoder_layers = j.at("encoder_layers").get<Index>();
  c.seq_len = j.at("seq_len").get<Index>();
  c.in_channels = j.at("in_channels").get<Index>();
  c.dropout = j.at("dropout").get<double>();
  c.nucleus_encoding = j.at("nucleus_encoding").get<bool>();
  c.axis_encoding = j.at("axis_encoding").get<bool>();
  return c;
}

template <typename Scalar>
void pack_adam(const nn::Adam<Scalar>& opt,
               const std::vector<nn::TensorRef<Scalar>>& params, Checkpoint& ck) {
  ck.meta["adam"] = {{"lr", opt.lr},
                     {"beta1", opt.beta1},
                     {"beta2", opt.beta2},
                     {"eps", opt.eps},
                     {"step_count", opt.step_count}};
  for (size_t i = 0; i < params.size(); ++i) {
    for (auto [tag, buf] : {std::pair{"adam.m.", &opt.m[i]}, {"adam.v.", &opt.v[i]}}) {
      Checkpoint::Tensor t;
      t.name = tag + params[i].name;
      t.rows = 1;
      t.cols = buf->size();
      t.data.resize(static_cast<size_t>(buf->size()));
      for (Index k = 0; k < buf->size(); ++k)
        t.data[static_cast<size_t>(k)] = static_cast<float>((*buf)[k]);
      ck.tensors.push_back(std::move(t));
    }
  }
}

template <typename Scalar>
void unpack_adam(nn::Adam<Scalar>& opt,
                 const std::vector<nn::TensorRef<Scalar>>& params,
                 const Checkpoint& ck) {
  const auto& a = ck.meta.at("adam");
  opt.lr = a.at("lr").get<double>();
  opt.beta1 = a.at("beta1").get<double>();
  opt.beta2 = a.at("beta2").get<double>();
  opt.eps = a.at("eps").get<double>();
  opt.step_count = a.at("step_count").get<long>();
  opt.m.clear();
  opt.v.clear();
  for (const auto& p : params) {
    for (auto [tag, dest] : {std::pair{"adam.m.", &opt.m}, {"adam.v.", &opt.v}}) {
      const auto* t = ck.find(tag + p.name);
      if (!t || t->rows * t->cols != p.size())
        throw IncompatibleCheckpoint("bad optimizer tensor for " + p.name);
      Vector<Scalar> buf(p.size());
      for (Index k = 0; k < p.size(); ++k)
        buf[k] = static_cast<Scalar>(t->data[static_cast<size_t>(k)]);
      dest->push_back(std::move(buf));
    }
  }
}

template <typename Scalar>
void save_pretrain_state(PretrainState<Scalar>& state,
                         const std::filesystem::path& path) {
  Checkpoint ck;
  ck.config = encoder_config_to_json(state.model.cfg);
  ck.meta["kind"] = "encoder";
  ck.meta["rng_seed"] = state.rng_seed;
  ck.meta["epoch"] = state.epoch;
  ck.meta["best_val_loss"] = state.best_val_loss;
  ck.meta["patience_used"] = state.patience_used;
  pack_tensors<Scalar>(state.model, ck);
  pack_adam(state.optimizer, nn::collect_tensors<Scalar>(state.model), ck);
  ck.save(path);
}

template <typename Scalar>
PretrainState<Scalar> load_pretrain_state(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "encoder")
    throw IncompatibleCheckpoint("not an encoder checkpoint");
  PretrainState<Scalar> state;
  state.model.init_zero(encoder_config_from_json(ck.config));
  unpack_tensors<Scalar>(state.model, ck);
  unpack_adam(state.optimizer, nn::collect_tensors<Scalar>(state.model), ck);
  state.rng_seed = ck.meta.at("rng_seed").get<uint64_t>();
  state.epoch = ck.meta.at("epoch").get<Index>();
  state.best_val_loss = ck.meta.at("best_val_loss").get<double>();
  state.patience_used = ck.meta.at("patience_used").get<Index>();
  return state;
}

}  // namespace unimotion

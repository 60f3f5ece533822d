#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "unimotion/classifier.hpp"
#include "unimotion/pretrain.hpp"

namespace unimotion {

struct FinetuneConfig {
  double lr = 1e-3;
  Index batch_size = 64;
  Index epochs = 200;
  uint64_t seed = 0;
  LossWeights weights;
  NucleusConfig<double> nucleus;

  void validate() const {
    nucleus.validate();
    if (batch_size < 2 || epochs < 1) throw InvalidConfig("FinetuneConfig: bad sizes");
  }
};

template <typename Scalar>
struct FinetuneState {
  GestureClassifier<Scalar> model;
  nn::Adam<Scalar> optimizer;
  uint64_t rng_seed = 0;
  uint64_t semantic_fingerprint = 0;
  std::vector<std::string> class_names;

  struct CurvePoint {
    Index epoch;
    double total, classification, semantic, contrastive;
  };
  std::vector<CurvePoint> history;
};

namespace detail {

/// Deterministic batch assignment with a fix-up pass so every batch holds at
/// least one same-class pair (required by the contrastive denominator).
inline std::vector<std::vector<size_t>> make_batches(
    const std::vector<int>& labels, std::span<const size_t> order, Index batch_size) {
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t n = std::min<size_t>(batch_size, order.size() - start);
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() + static_cast<long>(start + n));
  }
  auto has_pair = [&](const std::vector<size_t>& b) {
    for (size_t i = 0; i < b.size(); ++i)
      for (size_t j = i + 1; j < b.size(); ++j)
        if (labels[b[i]] == labels[b[j]]) return true;
    return false;
  };
  for (size_t bi = 0; bi < batches.size(); ++bi) {
    if (has_pair(batches[bi])) continue;
    // swap in a duplicate of this batch's first label from another batch
    const int want = labels[batches[bi][0]];
    for (size_t bj = 0; bj < batches.size() && !has_pair(batches[bi]); ++bj) {
      if (bj == bi) continue;
      for (size_t k = 0; k < batches[bj].size(); ++k) {
        if (labels[batches[bj][k]] != want) continue;
        std::swap(batches[bj][k], batches[bi].back());
        break;
      }
    }
  }
  return batches;
}

}  // namespace detail

/// Stage-2 fine-tuning with the three-loss objective and the linear weight
/// ramp. Windows must cover every class in [0, K); nucleus and significant
/// axis are recomputed per window exactly as in pretraining.
template <typename Scalar>
FinetuneState<Scalar> finetune(std::span<const IMUWindow<Scalar>> windows,
                               const std::vector<int>& labels,
                               const Encoder<Scalar>& pretrained,
                               const SemanticTable<Scalar>& table,
                               const ClassifierConfig& ccfg,
                               const FinetuneConfig& cfg) {
  cfg.validate();
  ccfg.validate();
  if (windows.size() != labels.size() || windows.empty())
    throw InvalidInput("finetune: windows/labels mismatch");
  if (table.num_classes() != ccfg.num_classes)
    throw IncompatibleCheckpoint("finetune: semantic table size != num_classes");
  std::vector<bool> seen(static_cast<size_t>(ccfg.num_classes), false);
  for (int y : labels) {
    if (y < 0 || y >= ccfg.num_classes)
      throw InvalidInput("finetune: label out of range");
    seen[static_cast<size_t>(y)] = true;
  }
  for (Index k = 0; k < ccfg.num_classes; ++k)
    if (!seen[static_cast<size_t>(k)])
      throw StratificationError("finetune: class " + std::to_string(k) +
                                " absent from the labeled subset");

  const auto ncfg = cast_nucleus_config<Scalar>(cfg.nucleus);
  std::vector<WindowAnnotation> annos;
  annos.reserve(windows.size());
  for (const auto& w : windows) annos.push_back(annotate(w, ncfg));

  FinetuneState<Scalar> state;
  Rng init_rng = Rng::derive(cfg.seed, 0xc1a55);
  state.model.init(pretrained, ccfg, init_rng);
  state.optimizer.lr = cfg.lr;
  state.optimizer.init(nn::collect_tensors<Scalar>(state.model));
  state.rng_seed = cfg.seed;
  state.semantic_fingerprint = table.fingerprint();

  GestureClassifier<Scalar> grads = GestureClassifier<Scalar>::zeros_like(state.model);
  auto param_refs = nn::collect_tensors<Scalar>(state.model);
  auto grad_refs = nn::collect_tensors<Scalar>(grads);
  auto zero_grads = [&] {
    for (auto& t : grad_refs)
      Eigen::Map<Vector<Scalar>>(t.data, t.size()).setZero();
  };

  const Index seq = windows[0].len();
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto [w_s, w_c] = cfg.weights.at(epoch, cfg.epochs);
    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng = Rng::derive(cfg.seed, 0x6f72, static_cast<uint64_t>(epoch));
    order_rng.shuffle(order);
    auto batches = detail::make_batches(labels, order, cfg.batch_size);

    double ep_total = 0, ep_cls = 0, ep_sem = 0, ep_con = 0;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      nn::BatchLayout lay;
      lay.batch = static_cast<Index>(batch.size());
      lay.seq = seq;
      lay.padded = BoolArray::Constant(lay.rows(), false);
      Matrix<Scalar> raw(lay.rows(), kNumChannels);
      std::vector<WindowAnnotation> batch_annos;
      std::vector<int> batch_labels;
      for (size_t i = 0; i < batch.size(); ++i) {
        lay.padded.segment(static_cast<Index>(i) * seq, seq) = windows[batch[i]].pad_mask;
        raw.middleRows(static_cast<Index>(i) * seq, seq) = windows[batch[i]].samples;
        batch_annos.push_back(annos[batch[i]]);
        batch_labels.push_back(labels[batch[i]]);
      }

      zero_grads();
      typename GestureClassifier<Scalar>::Cache cache;
      Rng drop_rng = Rng::derive(cfg.seed, 0x64726f70, static_cast<uint64_t>(epoch), bi);
      auto out = state.model.forward(raw, lay, batch_annos, ccfg.dropout, &drop_rng,
                                     &cache);
      Matrix<Scalar> dlogits, df, dz;
      const double l_cls =
          static_cast<double>(classification_loss(out.logits, batch_labels, &dlogits));
      const double l_sem =
          static_cast<double>(semantic_loss(out.f, batch_labels, table, &df));
      const double l_con = static_cast<double>(
          contrastive_loss(out.z, batch_labels, Scalar(ccfg.tau), &dz));
      const double l_total = total_loss(l_cls, l_sem, l_con, w_s, w_c);

      df *= Scalar(w_s);
      dz *= Scalar(w_c);
      state.model.backward(cache, lay, dlogits, df, dz, grads);
      state.optimizer.step(param_refs, grad_refs);
      ep_total += l_total;
      ep_cls += l_cls;
      ep_sem += l_sem;
      ep_con += l_con;
    }
    const double nb = static_cast<double>(batches.size());
    state.history.push_back(
        {epoch + 1, ep_total / nb, ep_cls / nb, ep_sem / nb, ep_con / nb});
  }
  return state;
}

template <typename Scalar>
struct Prediction {
  int class_id = 0;
  Vector<Scalar> probabilities;
};

/// Inference path: window -> nucleus/axis annotation -> class probabilities.
/// No text or semantic-table access (the table exists only during training).
template <typename Scalar>
Prediction<Scalar> predict(const IMUWindow<Scalar>& window,
                           const GestureClassifier<Scalar>& model,
                           const NucleusConfig<Scalar>& ncfg) {
  std::vector<WindowAnnotation> annos{annotate(window, ncfg)};
  auto lay = build_layout<Scalar>({&window, 1});
  auto out = model.forward(stack_inputs<Scalar>({&window, 1}), lay, annos, 0.0, nullptr);
  Prediction<Scalar> p;
  const Scalar mx = out.logits.row(0).maxCoeff();
  Vector<Scalar> probs = (out.logits.row(0).array() - mx).exp().transpose();
  probs /= probs.sum();
  p.probabilities = probs;
  Index best = 0;
  out.logits.row(0).maxCoeff(&best);
  p.class_id = static_cast<int>(best);
  return p;
}

inline nlohmann::json classifier_config_to_json(const ClassifierConfig& c) {
  return {{"attn_heads", c.attn_heads},       {"layers", c.layers},
          {"hidden_dim", c.hidden_dim},       {"projection_dim", c.projection_dim},
          {"num_classes", c.num_classes},     {"tau", c.tau},
          {"dropout", c.dropout},             {"use_transformer", c.use_transformer},
          {"freeze_encoder", c.freeze_encoder}};
}

inline ClassifierConfig classifier_config_from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.attn_heads = j.at("attn_heads").get<Index>();
  c.layers = j.at("layers").get<Index>();
  c.hidden_dim = j.at("hidden_dim").get<Index>();
  c.projection_dim = j.at("projection_dim").get<Index>();
  c.num_classes = j.at("num_classes").get<Index>();
  c.tau = j.at("tau").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.use_transformer = j.at("use_transformer").get<bool>();
  c.freeze_encoder = j.at("freeze_encoder").get<bool>();
  return c;
}

inline nlohmann::json nucleus_config_to_json(const NucleusConfig<double>& c) {
  nlohmann::json j{{"delta_t", c.delta_t},
                   {"min_gap", c.min_gap},
                   {"min_region", c.min_region}};
  if (c.motion_thresh)
    j["motion_thresh"] = *c.motion_thresh;
  else
    j["motion_thresh"] = "adaptive";
  return j;
}

inline NucleusConfig<double> nucleus_config_from_json(const nlohmann::json& j) {
  NucleusConfig<double> c;
  c.delta_t = j.at("delta_t").get<int>();
  c.min_gap = j.at("min_gap").get<int>();
  c.min_region = j.at("min_region").get<int>();
  if (j.at("motion_thresh").is_number())
    c.motion_thresh = j.at("motion_thresh").get<double>();
  return c;
}

template <typename Scalar>
void save_finetune_state(FinetuneState<Scalar>& state,
                         const NucleusConfig<double>& nucleus,
                         const std::filesystem::path& path) {
  Checkpoint ck;
  ck.config["classifier"] = classifier_config_to_json(state.model.ccfg);
  ck.config["encoder"] = encoder_config_to_json(state.model.encoder.cfg);
  ck.config["nucleus"] = nucleus_config_to_json(nucleus);
  ck.meta["kind"] = "classifier";
  ck.meta["rng_seed"] = state.rng_seed;
  ck.meta["semantic_fingerprint"] = state.semantic_fingerprint;
  ck.meta["class_names"] = state.class_names;
  pack_tensors<Scalar>(state.model, ck);
  pack_adam(state.optimizer, nn::collect_tensors<Scalar>(state.model), ck);
  ck.save(path);
}

template <typename Scalar>
struct ClassifierBundle {
  GestureClassifier<Scalar> model;
  NucleusConfig<double> nucleus;
  std::vector<std::string> class_names;
  uint64_t semantic_fingerprint = 0;
};

template <typename Scalar>
ClassifierBundle<Scalar> load_classifier_bundle(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "classifier")
    throw IncompatibleCheckpoint("not a classifier checkpoint");
  ClassifierBundle<Scalar> b;
  b.model.init_zero(encoder_config_from_json(ck.config.at("encoder")),
                    classifier_config_from_json(ck.config.at("classifier")));
  unpack_tensors<Scalar>(b.model, ck);
  b.nucleus = nucleus_config_from_json(ck.config.at("nucleus"));
  b.class_names = ck.meta.value("class_names", std::vector<std::string>{});
  b.semantic_fingerprint = ck.meta.value("semantic_fingerprint", uint64_t{0});
  return b;
}

}  // namespace unimotion

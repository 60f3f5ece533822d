#include <doctest.h>

#include "oracles.hpp"
#include "unimotion/classifier.hpp"
#include "unimotion/finetune.hpp"
#include "unimotion/rng.hpp"

using namespace unimotion;

namespace {

Matrix<double> random_matrix(Index r, Index c, Rng& rng) {
  Matrix<double> m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

Matrix<double> random_unit_rows(Index r, Index c, Rng& rng) {
  Matrix<double> m = random_matrix(r, c, rng);
  m.rowwise().normalize();
  return m;
}

SemanticTable<double> random_table(Index k, Rng& rng) {
  Matrix<double> e = random_unit_rows(k, 6, rng);
  return derive_margins_weights<double>(e);
}

EncoderConfig tiny_encoder_config(Index t_len = 12) {
  EncoderConfig cfg;
  cfg.hidden_dim = 8;
  cfg.ff_dim = 16;
  cfg.attn_heads = 2;
  cfg.encoder_layers = 1;
  cfg.seq_len = t_len;
  cfg.dropout = 0.0;
  return cfg;
}

ClassifierConfig tiny_classifier_config(Index k) {
  ClassifierConfig c;
  c.attn_heads = 2;
  c.layers = 1;
  c.hidden_dim = 8;
  c.projection_dim = 4;
  c.num_classes = k;
  c.dropout = 0.0;
  return c;
}

IMUWindow<double> random_window(Rng& rng, Index t_len) {
  IMUWindow<double> w;
  w.samples = random_matrix(t_len, kNumChannels, rng);
  w.pad_mask = BoolArray::Constant(t_len, false);
  return w;
}

}  // namespace

TEST_CASE("classification_loss: analytic values and oracle") {
  Matrix<double> logits = Matrix<double>::Zero(3, 12);
  std::vector<int> labels{0, 5, 11};
  CHECK(classification_loss(logits, labels) ==
        doctest::Approx(std::log(12.0)).epsilon(1e-9));

  Matrix<double> sharp = Matrix<double>::Zero(2, 4);
  sharp(0, 1) = 50.0;
  sharp(1, 3) = 50.0;
  CHECK(classification_loss(sharp, {1, 3}) < 1e-12);

  Rng rng(1);
  auto r = random_matrix(8, 5, rng);
  std::vector<int> y{0, 1, 2, 3, 4, 0, 1, 2};
  CHECK(classification_loss(r, y) ==
        doctest::Approx(oracles::cross_entropy(r, y)).epsilon(1e-9));

  CHECK_THROWS_AS(classification_loss(r, {0, 1, 2, 3, 9, 0, 1, 2}), InvalidInput);

  // gradient vs central differences
  Matrix<double> dlogits;
  classification_loss(r, y, &dlogits);
  Vector<double> numeric;
  oracles::central_difference(r.data(), r.size(),
                              [&] { return classification_loss(r, y); }, 1e-5, numeric);
  Eigen::Map<Vector<double>> got(dlogits.data(), dlogits.size());
  CHECK(oracles::relative_error<double>(got, numeric) < 1e-7);
}

TEST_CASE("semantic_loss: hinge arithmetic, oracle, invariance, gradient") {
  // two samples at distance 0.5 with margin 1.0, weight 0.5 -> 0.25
  Matrix<double> f(2, 3);
  f << 0, 0, 0, 0.5, 0, 0;
  SemanticTable<double> t;
  t.margin = Matrix<double>::Constant(2, 2, 1.0);
  t.weight = Matrix<double>::Constant(2, 2, 0.5);
  t.weight.diagonal().setZero();
  CHECK(semantic_loss<double>(f, {0, 1}, t) == doctest::Approx(0.25).epsilon(1e-12));

  // inactive hinge -> 0
  Matrix<double> far(2, 3);
  far << 0, 0, 0, 5, 0, 0;
  CHECK(semantic_loss<double>(far, {0, 1}, t) == 0.0);

  // random batch vs double-loop oracle
  Rng rng(2);
  auto table = random_table(3, rng);
  auto fr = random_matrix(7, 4, rng);
  std::vector<int> y{0, 1, 2, 0, 1, 2, 0};
  CHECK(semantic_loss(fr, y, table) ==
        doctest::Approx(oracles::semantic(fr, y, table.weight, table.margin))
            .epsilon(1e-9));

  // translation invariance
  Matrix<double> shifted = fr;
  shifted.rowwise() += RowVector<double>::Constant(4, 3.7);
  CHECK(semantic_loss(shifted, y, table) ==
        doctest::Approx(semantic_loss(fr, y, table)).epsilon(1e-9));

  // same-class pairs contribute zero: batch of one class
  CHECK(semantic_loss(fr, {0, 0, 0, 0, 0, 0, 0}, table) == 0.0);

  // gradient vs central differences
  Matrix<double> df;
  semantic_loss(fr, y, table, &df);
  Vector<double> numeric;
  oracles::central_difference(fr.data(), fr.size(),
                              [&] { return semantic_loss(fr, y, table); }, 1e-5,
                              numeric);
  Eigen::Map<Vector<double>> got(df.data(), df.size());
  CHECK(oracles::relative_error<double>(got, numeric) < 1e-6);
}

TEST_CASE("contrastive_loss: limits, oracle, rotation invariance, gradient") {
  // two identical same-class projections -> 0
  Matrix<double> z(2, 3);
  z << 1, 0, 0, 1, 0, 0;
  CHECK(contrastive_loss<double>(z, {4, 4}, 0.1) == doctest::Approx(0.0).epsilon(1e-12));

  // tau small with positives far more similar than negatives -> loss -> 0
  Matrix<double> zz(3, 2);
  zz << 1, 0, 1, 0, -1, 0;
  CHECK(contrastive_loss<double>(zz, {0, 0, 1}, 0.02) < 1e-8);

  // random batch of 8 over 3 classes vs brute-force oracle
  Rng rng(3);
  auto zr = random_unit_rows(8, 4, rng);
  std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
  CHECK(contrastive_loss<double>(zr, y, 0.1) ==
        doctest::Approx(oracles::contrastive<double>(zr, y, 0.1)).epsilon(1e-9));

  // invariance under a common rotation (depends only on dot products)
  Matrix<double> m = random_matrix(4, 4, rng);
  Eigen::HouseholderQR<Matrix<double>> qr(m);
  Matrix<double> q = qr.householderQ();
  CHECK(contrastive_loss<double>((zr * q).eval(), y, 0.1) ==
        doctest::Approx(contrastive_loss<double>(zr, y, 0.1)).epsilon(1e-9));

  // all labels distinct -> no anchor -> DegenerateBatch
  CHECK_THROWS_AS(contrastive_loss<double>(zr, {0, 1, 2, 3, 4, 5, 6, 7}, 0.1),
                  DegenerateBatch);

  // gradient vs central differences
  Matrix<double> dz;
  contrastive_loss<double>(zr, y, 0.1, &dz);
  Vector<double> numeric;
  oracles::central_difference(zr.data(), zr.size(),
                              [&] { return contrastive_loss<double>(zr, y, 0.1); },
                              1e-5, numeric);
  Eigen::Map<Vector<double>> got(dz.data(), dz.size());
  CHECK(oracles::relative_error<double>(got, numeric) < 1e-6);
}

TEST_CASE("total_loss and the weight ramp") {
  LossWeights w;
  auto [s0, c0] = w.at(0, 200);
  CHECK(s0 == doctest::Approx(0.1));
  CHECK(c0 == doctest::Approx(0.1));
  auto [s1, c1] = w.at(199, 200);
  CHECK(s1 == doctest::Approx(0.3));
  CHECK(c1 == doctest::Approx(0.5));
  CHECK(total_loss(2.0, 1.0, 1.0, s1, c1) == doctest::Approx(2.8).epsilon(1e-12));

  // weights nondecreasing over epochs
  double prev_s = -1, prev_c = -1;
  for (Index e = 0; e < 200; ++e) {
    auto [s, c] = w.at(e, 200);
    CHECK(s >= prev_s);
    CHECK(c >= prev_c);
    prev_s = s;
    prev_c = c;
  }
}

TEST_CASE("classify_forward: duplicate windows, unit projections, pooling oracle") {
  Rng rng(4);
  Encoder<double> enc;
  enc.init(tiny_encoder_config(), rng);
  GestureClassifier<double> cls;
  cls.init(enc, tiny_classifier_config(3), rng);

  auto w = random_window(rng, 12);
  w.pad_mask.tail(3).setConstant(true);
  w.samples.bottomRows(3).setZero();
  std::vector<IMUWindow<double>> windows{w, w};
  auto lay = build_layout<double>(windows);
  std::vector<WindowAnnotation> annos(2);
  for (auto& a : annos) {
    a.in_nucleus = BoolArray::Constant(12, false);
    a.in_nucleus.segment(4, 3).setConstant(true);
    a.axis_index = 1;
  }

  typename GestureClassifier<double>::Cache cache;
  auto out = cls.forward(stack_inputs<double>(windows), lay, annos, 0.0, nullptr, &cache);
  CHECK((out.f.row(0) - out.f.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.z.row(0) - out.z.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.logits.row(0) - out.logits.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  for (Index i = 0; i < 2; ++i)
    CHECK(out.z.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));

  // mean pooling matches the brute-force average over non-padded steps
  for (Index b = 0; b < 2; ++b) {
    RowVector<double> avg = RowVector<double>::Zero(8);
    Index count = 0;
    for (Index t = 0; t < 12; ++t) {
      if (lay.padded[b * 12 + t]) continue;
      avg += cache.pooled_in.row(b * 12 + t);
      ++count;
    }
    avg /= static_cast<double>(count);
    CHECK((cache.pooled.row(b) - avg).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("classifier: hidden-dim mismatch raises IncompatibleCheckpoint") {
  Rng rng(5);
  Encoder<double> enc;
  enc.init(tiny_encoder_config(), rng);
  auto ccfg = tiny_classifier_config(3);
  ccfg.hidden_dim = 16;
  GestureClassifier<double> cls;
  CHECK_THROWS_AS(cls.init(enc, ccfg, rng), IncompatibleCheckpoint);
}

TEST_CASE("full classifier: total-loss gradients match central differences") {
  Rng rng(6);
  Encoder<double> enc;
  enc.init(tiny_encoder_config(), rng);
  auto ccfg = tiny_classifier_config(3);
  GestureClassifier<double> cls;
  cls.init(enc, ccfg, rng);
  auto table = random_table(3, rng);

  std::vector<IMUWindow<double>> windows;
  std::vector<WindowAnnotation> annos;
  std::vector<int> labels{0, 1, 2, 0, 1};
  for (size_t i = 0; i < labels.size(); ++i) {
    auto w = random_window(rng, 12);
    if (i == 2) {
      w.pad_mask.tail(2).setConstant(true);
      w.samples.bottomRows(2).setZero();
    }
    windows.push_back(w);
    WindowAnnotation a;
    a.in_nucleus = BoolArray::Constant(12, false);
    a.in_nucleus.segment(3, 4).setConstant(true);
    a.axis_index = static_cast<int>(i % 3);
    annos.push_back(a);
  }
  auto lay = build_layout<double>(windows);
  auto raw = stack_inputs<double>(windows);
  const double w_s = 0.3, w_c = 0.5;

  auto loss_fn = [&] {
    auto out = cls.forward(raw, lay, annos, 0.0, nullptr);
    return total_loss(classification_loss(out.logits, labels),
                      semantic_loss(out.f, labels, table),
                      contrastive_loss(out.z, labels, ccfg.tau), w_s, w_c);
  };

  GestureClassifier<double> grads = GestureClassifier<double>::zeros_like(cls);
  typename GestureClassifier<double>::Cache cache;
  auto out = cls.forward(raw, lay, annos, 0.0, nullptr, &cache);
  Matrix<double> dlogits, df, dz;
  classification_loss(out.logits, labels, &dlogits);
  semantic_loss(out.f, labels, table, &df);
  contrastive_loss(out.z, labels, ccfg.tau, &dz);
  df *= w_s;
  dz *= w_c;
  cls.backward(cache, lay, dlogits, df, dz, grads);

  auto params = nn::collect_tensors<double>(cls);
  auto analytic = nn::collect_tensors<double>(grads);
  REQUIRE(params.size() == analytic.size());
  for (size_t i = 0; i < params.size(); ++i) {
    Vector<double> numeric;
    oracles::central_difference(params[i].data, params[i].size(), loss_fn, 1e-4,
                                numeric);
    Eigen::Map<Vector<double>> got(analytic[i].data, analytic[i].size());
    INFO("tensor ", params[i].name);
    CHECK(oracles::relative_error<double>(got, numeric) < 1e-4);
  }
}

TEST_CASE("mlp ablation head: forward shape and gradient check") {
  Rng rng(7);
  Encoder<double> enc;
  enc.init(tiny_encoder_config(), rng);
  auto ccfg = tiny_classifier_config(3);
  ccfg.use_transformer = false;
  GestureClassifier<double> cls;
  cls.init(enc, ccfg, rng);

  std::vector<IMUWindow<double>> windows;
  std::vector<WindowAnnotation> annos;
  std::vector<int> labels{0, 1, 2, 1};
  for (size_t i = 0; i < labels.size(); ++i) {
    windows.push_back(random_window(rng, 12));
    WindowAnnotation a;
    a.in_nucleus = BoolArray::Constant(12, false);
    a.in_nucleus.segment(5, 3).setConstant(true);
    a.axis_index = 0;
    annos.push_back(a);
  }
  auto lay = build_layout<double>(windows);
  auto raw = stack_inputs<double>(windows);
  auto table = random_table(3, rng);

  auto loss_fn = [&] {
    auto out = cls.forward(raw, lay, annos, 0.0, nullptr);
    return total_loss(classification_loss(out.logits, labels),
                      semantic_loss(out.f, labels, table),
                      contrastive_loss(out.z, labels, ccfg.tau), 0.3, 0.5);
  };

  GestureClassifier<double> grads = GestureClassifier<double>::zeros_like(cls);
  typename GestureClassifier<double>::Cache cache;
  auto out = cls.forward(raw, lay, annos, 0.0, nullptr, &cache);
  CHECK(out.logits.rows() == 4);
  Matrix<double> dlogits, df, dz;
  classification_loss(out.logits, labels, &dlogits);
  semantic_loss(out.f, labels, table, &df);
  contrastive_loss(out.z, labels, ccfg.tau, &dz);
  df *= 0.3;
  dz *= 0.5;
  cls.backward(cache, lay, dlogits, df, dz, grads);

  auto params = nn::collect_tensors<double>(cls);
  auto analytic = nn::collect_tensors<double>(grads);
  for (size_t i = 0; i < params.size(); ++i) {
    Vector<double> numeric;
    oracles::central_difference(params[i].data, params[i].size(), loss_fn, 1e-4,
                                numeric);
    Eigen::Map<Vector<double>> got(analytic[i].data, analytic[i].size());
    INFO("tensor ", params[i].name);
    CHECK(oracles::relative_error<double>(got, numeric) < 1e-4);
  }
}

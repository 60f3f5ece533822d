#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "unimotion/rng.hpp"
#include "unimotion/signal.hpp"

using namespace unimotion;

namespace {

IMUWindow<double> random_window(Rng& rng, Index t_len = kWindowLen) {
  IMUWindow<double> w;
  w.samples.resize(t_len, kNumChannels);
  for (Index j = 0; j < kNumChannels; ++j)
    for (Index i = 0; i < t_len; ++i) w.samples(i, j) = rng.normal();
  w.pad_mask = BoolArray::Constant(t_len, false);
  return w;
}

}  // namespace

TEST_CASE("preprocess: constant signal z-scores to zero") {
  RawStream raw;
  const Index n = 240;
  raw.t.resize(n);
  raw.x.resize(n, kNumChannels);
  for (Index i = 0; i < n; ++i) {
    raw.t[i] = i / 40.0;  // 40 Hz
    raw.x.row(i).setConstant(3.7);
  }
  auto w = preprocess<double>(raw);
  CHECK(w.len() == 120);
  CHECK(w.samples.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("preprocess: 60 samples at 20 Hz pads 30 each side") {
  RawStream raw;
  raw.t.resize(60);
  raw.x.resize(60, kNumChannels);
  Rng rng(7);
  for (Index i = 0; i < 60; ++i) {
    raw.t[i] = i / 20.0;
    for (Index c = 0; c < kNumChannels; ++c) raw.x(i, c) = rng.normal();
  }
  auto w = preprocess<double>(raw);
  CHECK(w.pad_mask.head(30).all());
  CHECK(w.pad_mask.tail(30).all());
  CHECK(!w.pad_mask.segment(30, 60).any());
  for (Index i = 0; i < 30; ++i) {
    CHECK(w.samples.row(i).cwiseAbs().maxCoeff() == 0.0);
    CHECK(w.samples.row(119 - i).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("preprocess: 130 samples at 100 Hz resample to 26, oracle values") {
  RawStream raw;
  const Index n = 130;
  raw.t.resize(n);
  raw.x.resize(n, kNumChannels);
  Rng rng(11);
  for (Index i = 0; i < n; ++i) {
    raw.t[i] = i / 100.0;
    for (Index c = 0; c < kNumChannels; ++c) raw.x(i, c) = rng.normal();
  }
  auto w = preprocess<double>(raw);
  const Index m = w.valid_count();
  CHECK(m == 26);
  const Index pad_left = (120 - m) / 2;
  CHECK(pad_left == 47);

  // oracle: interpolate at exact target timestamps, then z-score the same way
  Eigen::MatrixXd expect(m, kNumChannels);
  for (Index c = 0; c < kNumChannels; ++c) {
    for (Index i = 0; i < m; ++i)
      expect(i, c) = oracles::interp_at(raw.t, raw.x.col(c), i * 0.05);
    const double mean = expect.col(c).mean();
    const double sd = std::sqrt((expect.col(c).array() - mean).square().sum() / m);
    expect.col(c) = (expect.col(c).array() - mean) / sd;
  }
  CHECK((w.samples.block(pad_left, 0, m, kNumChannels) - expect).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("preprocess: error paths") {
  RawStream empty;
  empty.t.resize(0);
  empty.x.resize(0, kNumChannels);
  CHECK_THROWS_AS(preprocess<double>(empty), InvalidInput);

  RawStream bad;
  bad.t.resize(3);
  bad.t << 0.0, 0.2, 0.1;
  bad.x = Eigen::MatrixXd::Zero(3, kNumChannels);
  CHECK_THROWS_AS(preprocess<double>(bad), InvalidInput);
}

TEST_CASE("compute_energy: trivial and oracle cases") {
  IMUWindow<double> w;
  w.samples = Matrix<double>::Zero(kWindowLen, kNumChannels);
  w.pad_mask = BoolArray::Constant(kWindowLen, false);
  CHECK(compute_energy(w).cwiseAbs().maxCoeff() == 0.0);

  w.samples(40, 0) = 3.0;  // acc_x
  w.samples(40, 3) = 4.0;  // gyro_x
  auto e = compute_energy(w);
  CHECK(e[40] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(e[39] == 0.0);

  Rng rng(3);
  auto r = random_window(rng);
  auto got = compute_energy(r);
  auto want = oracles::energy(r.samples);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("compute_energy: invariant under channel permutation") {
  Rng rng(5);
  auto w = random_window(rng);
  auto e1 = compute_energy(w);
  IMUWindow<double> p = w;
  p.samples.col(0).swap(p.samples.col(5));
  p.samples.col(2).swap(p.samples.col(3));
  auto e2 = compute_energy(p);
  CHECK((e1 - e2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("detect_nucleus: constant energy yields empty nucleus") {
  EnergyProfile<double> e = Vector<double>::Constant(kWindowLen, 2.5);
  NucleusConfig<double> cfg;
  cfg.motion_thresh = 0.5;
  auto n = detect_nucleus(e, cfg, BoolArray::Constant(kWindowLen, false));
  CHECK(n.empty());
  CHECK(n.count() == 0);
}

TEST_CASE("detect_nucleus: hand-evaluated merge example") {
  // energy [0,0,5,5,0,0,...]: candidates {1,3}, merged into [1,4)
  EnergyProfile<double> e = Vector<double>::Zero(kWindowLen);
  e[2] = 5.0;
  e[3] = 5.0;
  NucleusConfig<double> cfg;
  cfg.delta_t = 1;
  cfg.motion_thresh = 1.0;
  cfg.min_gap = 2;
  cfg.min_region = 1;
  auto n = detect_nucleus(e, cfg, BoolArray::Constant(kWindowLen, false));
  REQUIRE(n.regions.size() == 1);
  CHECK(n.regions[0].first == 1);
  CHECK(n.regions[0].second == 4);
  CHECK(n.count() == 3);
}

TEST_CASE("detect_nucleus: adaptive threshold finds a Gaussian bump") {
  IMUWindow<double> w;
  w.samples = Matrix<double>::Zero(kWindowLen, kNumChannels);
  w.pad_mask = BoolArray::Constant(kWindowLen, false);
  for (Index t = 0; t < kWindowLen; ++t) {
    // bump of full width ~10 samples centered at t=60
    const double g = 3.0 * std::exp(-0.5 * std::pow((t - 60.0) / 5.0, 2));
    w.samples(t, 0) = g;
  }
  auto e = compute_energy(w);
  NucleusConfig<double> cfg;  // adaptive
  auto n = detect_nucleus(e, cfg, w.pad_mask);
  REQUIRE(n.regions.size() == 1);
  CHECK(n.in_nucleus[60]);

  // cross-check candidates against the brute-force enumeration oracle
  std::vector<double> diffs;
  for (Index t = 0; t + 1 < kWindowLen; ++t) diffs.push_back(std::abs(e[t + 1] - e[t]));
  double mean = 0;
  for (double d : diffs) mean += d;
  mean /= diffs.size();
  double var = 0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= diffs.size();
  const double thresh = mean + std::sqrt(var);
  auto cands = oracles::nucleus_candidates(e, 1, thresh, w.pad_mask);
  REQUIRE(!cands.empty());
  for (Index c : cands) CHECK(n.in_nucleus[c]);
}

TEST_CASE("detect_nucleus: never intersects padding; errors on all-pad") {
  Rng rng(17);
  auto w = random_window(rng);
  w.pad_mask.head(20).setConstant(true);
  w.pad_mask.tail(20).setConstant(true);
  w.samples.topRows(20).setZero();
  w.samples.bottomRows(20).setZero();
  auto e = compute_energy(w);
  NucleusConfig<double> cfg;
  auto n = detect_nucleus(e, cfg, w.pad_mask);
  for (Index t = 0; t < kWindowLen; ++t)
    if (w.pad_mask[t]) CHECK(!n.in_nucleus[t]);

  CHECK_THROWS_AS(
      detect_nucleus(e, cfg, BoolArray::Constant(kWindowLen, true)), EmptySignal);
}

TEST_CASE("detect_nucleus: adaptive detection invariant to positive scaling") {
  Rng rng(23);
  auto w = random_window(rng);
  auto e = compute_energy(w);
  NucleusConfig<double> cfg;  // adaptive
  auto n1 = detect_nucleus(e, cfg, w.pad_mask);
  EnergyProfile<double> scaled = e * 7.25;
  auto n2 = detect_nucleus(scaled, cfg, w.pad_mask);
  REQUIRE(n1.regions.size() == n2.regions.size());
  for (size_t i = 0; i < n1.regions.size(); ++i) {
    CHECK(n1.regions[i].first == n2.regions[i].first);
    CHECK(n1.regions[i].second == n2.regions[i].second);
  }

  // energy itself scales linearly with the channels
  IMUWindow<double> ws = w;
  ws.samples *= 7.25;
  CHECK((compute_energy(ws) - scaled).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("significant_axis: argmax, tie-break, oracle, sign flips") {
  IMUWindow<double> w;
  w.samples = Matrix<double>::Zero(kWindowLen, kNumChannels);
  w.pad_mask = BoolArray::Constant(kWindowLen, false);
  NucleusMask n;
  n.in_nucleus = BoolArray::Constant(kWindowLen, false);
  n.in_nucleus.segment(50, 10).setConstant(true);
  n.regions = {{50, 60}};
  for (Index t = 50; t < 60; ++t) {
    w.samples(t, 3) = 1.0;   // gyro_x sums to 10
    w.samples(t, 4) = 0.2;   // gyro_y sums to 2
    w.samples(t, 5) = 0.1;   // gyro_z sums to 1
  }
  auto a = significant_axis(w, n);
  CHECK(a.axis_index == 0);
  CHECK(a.cumulative_rotation[0] == doctest::Approx(10.0));
  CHECK(a.cumulative_rotation[1] == doctest::Approx(2.0));

  // all-zero gyro: tie-break to axis 0
  IMUWindow<double> z = w;
  z.samples.setZero();
  CHECK(significant_axis(z, n).axis_index == 0);

  // random window vs oracle
  Rng rng(29);
  auto r = random_window(rng);
  std::vector<Index> steps;
  for (Index t = 50; t < 60; ++t) steps.push_back(t);
  auto sums = oracles::axis_sums(r.samples, steps);
  auto ra = significant_axis(r, n);
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (sums[static_cast<size_t>(i)] > sums[static_cast<size_t>(best)]) best = i;
  CHECK(ra.axis_index == best);
  for (int i = 0; i < 3; ++i)
    CHECK(ra.cumulative_rotation[i] ==
          doctest::Approx(sums[static_cast<size_t>(i)]).epsilon(1e-12));

  // sign-flip invariance of any gyro channel
  IMUWindow<double> flipped = r;
  flipped.samples.col(4) *= -1.0;
  auto fa = significant_axis(flipped, n);
  CHECK(fa.axis_index == ra.axis_index);
  CHECK((fa.cumulative_rotation - ra.cumulative_rotation).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("significant_axis: empty nucleus falls back to non-padded window") {
  Rng rng(31);
  auto w = random_window(rng);
  w.pad_mask.head(10).setConstant(true);
  w.samples.topRows(10).setZero();
  NucleusMask empty;
  empty.in_nucleus = BoolArray::Constant(kWindowLen, false);
  auto a = significant_axis(w, empty);
  std::vector<Index> steps;
  for (Index t = 10; t < kWindowLen; ++t) steps.push_back(t);
  auto sums = oracles::axis_sums(w.samples, steps);
  for (int i = 0; i < 3; ++i)
    CHECK(a.cumulative_rotation[i] ==
          doctest::Approx(sums[static_cast<size_t>(i)]).epsilon(1e-12));
}

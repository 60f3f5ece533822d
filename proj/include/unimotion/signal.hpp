#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "unimotion/errors.hpp"
#include "unimotion/types.hpp"

namespace unimotion {

/// Raw timestamped stream at arbitrary rate, timestamps in seconds.
struct RawStream {
  Eigen::VectorXd t;  // strictly increasing
  Eigen::MatrixXd x;  // N x 6
};

template <typename Scalar>
struct NucleusConfig {
  int delta_t = 1;   // lag in samples
  std::optional<Scalar> motion_thresh{};  // empty = adaptive (mean + 1 sigma)
  int min_gap = 4;    // candidates closer than this merge into one region
  int min_region = 2; // regions shorter than this are dropped

  void validate() const {
    if (delta_t < 1) throw InvalidConfig("NucleusConfig: delta_t must be >= 1");
    if (min_region < 1) throw InvalidConfig("NucleusConfig: min_region must be >= 1");
    if (min_gap < 0) throw InvalidConfig("NucleusConfig: min_gap must be >= 0");
    if (motion_thresh && *motion_thresh < Scalar(0))
      throw InvalidConfig("NucleusConfig: motion_thresh must be >= 0");
  }
};

/// Binary marking of the high-energy motion phase.
struct NucleusMask {
  BoolArray in_nucleus;            // T
  std::vector<Interval> regions;   // disjoint, sorted, half-open

  Index count() const { return in_nucleus.count(); }
  bool empty() const { return regions.empty(); }
};

template <typename Scalar>
struct SignificantAxis {
  int axis_index = 0;                       // gyroscope axis in {0,1,2}
  Eigen::Matrix<Scalar, 3, 1> cumulative_rotation =
      Eigen::Matrix<Scalar, 3, 1>::Zero();
};

/// Resample to 20 Hz by linear interpolation, z-score per channel, pad
/// symmetrically with zeros to target_len.
template <typename Scalar>
IMUWindow<Scalar> preprocess(const RawStream& raw, Index target_len = kWindowLen,
                             double sample_rate = kSampleRate) {
  const Index n = raw.t.size();
  if (n == 0) throw InvalidInput("preprocess: empty stream");
  if (raw.x.rows() != n || raw.x.cols() != kNumChannels)
    throw InvalidInput("preprocess: sample matrix must be N x 6");
  for (Index i = 1; i < n; ++i)
    if (!(raw.t[i] > raw.t[i - 1]))
      throw InvalidInput("preprocess: timestamps must be strictly increasing");

  const double dt = 1.0 / sample_rate;
  const double duration = raw.t[n - 1] - raw.t[0];
  Index m = n == 1 ? 1 : static_cast<Index>(std::floor(duration / dt + 1e-9)) + 1;
  m = std::min(m, target_len);

  Eigen::MatrixXd resampled(m, kNumChannels);
  Index seg = 0;
  for (Index i = 0; i < m; ++i) {
    const double ti = raw.t[0] + i * dt;
    while (seg + 2 < n && raw.t[seg + 1] < ti) ++seg;
    if (n == 1) {
      resampled.row(i) = raw.x.row(0);
    } else {
      const double t0 = raw.t[seg], t1 = raw.t[seg + 1];
      const double a = std::clamp((ti - t0) / (t1 - t0), 0.0, 1.0);
      resampled.row(i) = raw.x.row(seg) + a * (raw.x.row(seg + 1) - raw.x.row(seg));
    }
  }

  // z-score over the resampled (non-padded) region; constant channels -> 0
  for (Index c = 0; c < kNumChannels; ++c) {
    const double mean = resampled.col(c).mean();
    const double var = (resampled.col(c).array() - mean).square().sum() / m;
    const double sd = std::sqrt(var);
    if (sd > 1e-12 * std::max(1.0, std::abs(mean)))
      resampled.col(c) = (resampled.col(c).array() - mean) / sd;
    else
      resampled.col(c).setZero();
  }

  IMUWindow<Scalar> w;
  w.samples = Matrix<Scalar>::Zero(target_len, kNumChannels);
  w.pad_mask = BoolArray::Constant(target_len, true);
  const Index pad_left = (target_len - m) / 2;
  w.samples.block(pad_left, 0, m, kNumChannels) = resampled.cast<Scalar>();
  w.pad_mask.segment(pad_left, m).setConstant(false);
  return w;
}

/// energy(t) = sqrt(sum over the six channels of the squared sample),
/// the Euclidean norm of each timestep.
template <typename Scalar>
EnergyProfile<Scalar> compute_energy(const IMUWindow<Scalar>& w) {
  return w.samples.rowwise().norm();
}

/// Threshold the lagged absolute energy difference, merge nearby candidate
/// timesteps into regions, and drop regions shorter than min_region.
template <typename Scalar>
NucleusMask detect_nucleus(const EnergyProfile<Scalar>& energy,
                           const NucleusConfig<Scalar>& cfg,
                           const BoolArray& pad_mask) {
  cfg.validate();
  const Index t_len = energy.size();
  if (pad_mask.size() != t_len)
    throw InvalidInput("detect_nucleus: pad_mask length mismatch");
  if (pad_mask.all()) throw EmptySignal("detect_nucleus: window entirely padded");

  // lagged differences where both endpoints are real samples
  std::vector<Index> positions;
  std::vector<Scalar> diffs;
  for (Index t = 0; t + cfg.delta_t < t_len; ++t) {
    if (pad_mask[t] || pad_mask[t + cfg.delta_t]) continue;
    positions.push_back(t);
    diffs.push_back(std::abs(energy[t + cfg.delta_t] - energy[t]));
  }

  Scalar thresh;
  if (cfg.motion_thresh) {
    thresh = *cfg.motion_thresh;
  } else {
    // adaptive rule: mean + 1 sigma of the absolute lagged differences
    Scalar mean = 0, var = 0;
    for (Scalar d : diffs) mean += d;
    mean /= diffs.empty() ? Scalar(1) : Scalar(diffs.size());
    for (Scalar d : diffs) var += (d - mean) * (d - mean);
    var /= diffs.empty() ? Scalar(1) : Scalar(diffs.size());
    thresh = mean + std::sqrt(var);
  }

  std::vector<Index> candidates;
  for (size_t i = 0; i < diffs.size(); ++i)
    if (diffs[i] > thresh) candidates.push_back(positions[i]);

  NucleusMask mask;
  mask.in_nucleus = BoolArray::Constant(t_len, false);
  if (candidates.empty()) return mask;

  // merge candidates within min_gap of each other, then apply min_region
  Index start = candidates[0], last = candidates[0];
  auto flush = [&](Index s, Index e) {
    if (e - s >= cfg.min_region) mask.regions.emplace_back(s, e);
  };
  for (size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i] - last <= cfg.min_gap) {
      last = candidates[i];
    } else {
      flush(start, last + 1);
      start = last = candidates[i];
    }
  }
  flush(start, last + 1);

  for (const auto& [s, e] : mask.regions)
    mask.in_nucleus.segment(s, e - s).setConstant(true);
  return mask;
}

/// Gyroscope axis with the largest cumulative absolute rotation over the
/// nucleus (full non-padded window when the nucleus is empty). Ties break
/// to the lowest index.
template <typename Scalar>
SignificantAxis<Scalar> significant_axis(const IMUWindow<Scalar>& w,
                                         const NucleusMask& n) {
  SignificantAxis<Scalar> out;
  const bool fallback = n.empty();
  for (Index t = 0; t < w.len(); ++t) {
    const bool in = fallback ? !w.pad_mask[t] : n.in_nucleus[t];
    if (!in) continue;
    for (int a = 0; a < 3; ++a)
      out.cumulative_rotation[a] += std::abs(w.samples(t, 3 + a));
  }
  out.axis_index = 0;
  for (int a = 1; a < 3; ++a)
    if (out.cumulative_rotation[a] > out.cumulative_rotation[out.axis_index])
      out.axis_index = a;
  return out;
}

}  // namespace unimotion

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

namespace unimotion {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

// Half-open [start, end) index interval.
using Interval = std::pair<Index, Index>;

constexpr int kNumChannels = 6;     // acc_x..z, gyro_x..z
constexpr int kWindowLen = 120;     // samples per canonical window
constexpr double kSampleRate = 20;  // Hz

/// Canonical fixed-length 6-axis sensor window. Padded timesteps are
/// all-zero across channels and flagged in pad_mask.
template <typename Scalar>
struct IMUWindow {
  Matrix<Scalar> samples;  // T x 6, channel order acc_xyz then gyro_xyz
  BoolArray pad_mask;      // T, true where zero-padded

  Index len() const { return samples.rows(); }
  Index padded_count() const { return pad_mask.count(); }
  Index valid_count() const { return len() - padded_count(); }
};

template <typename Scalar>
using EnergyProfile = Vector<Scalar>;

}  // namespace unimotion

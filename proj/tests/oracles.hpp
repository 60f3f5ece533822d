#pragma once

// Test-only brute-force oracles. These are written as plain scalar loops,
// independent of the library implementation paths they check.

#include <cmath>
#include <vector>

#include "unimotion/types.hpp"

namespace oracles {

using unimotion::Index;

// Euclidean norm per timestep, scalar loop.
template <typename S>
unimotion::Vector<S> energy(const unimotion::Matrix<S>& samples) {
  unimotion::Vector<S> e(samples.rows());
  for (Index t = 0; t < samples.rows(); ++t) {
    S acc = 0;
    for (Index c = 0; c < samples.cols(); ++c) acc += samples(t, c) * samples(t, c);
    e[t] = std::sqrt(acc);
  }
  return e;
}

// Candidate timesteps of the lagged-difference rule, enumerated directly.
template <typename S>
std::vector<Index> nucleus_candidates(const unimotion::Vector<S>& e, int dt,
                                      S thresh, const unimotion::BoolArray& pad) {
  std::vector<Index> out;
  for (Index t = 0; t + dt < e.size(); ++t) {
    if (pad[t] || pad[t + dt]) continue;
    if (std::abs(e[t + dt] - e[t]) > thresh) out.push_back(t);
  }
  return out;
}

// Per-axis absolute gyro sums over a set of timesteps.
template <typename S>
std::array<S, 3> axis_sums(const unimotion::Matrix<S>& samples,
                           const std::vector<Index>& steps) {
  std::array<S, 3> sums{0, 0, 0};
  for (Index t : steps)
    for (int a = 0; a < 3; ++a) sums[static_cast<size_t>(a)] += std::abs(samples(t, 3 + a));
  return sums;
}

// Linear interpolation of a raw stream at one query time.
inline double interp_at(const Eigen::VectorXd& t, const Eigen::VectorXd& x,
                        double q) {
  if (q <= t[0]) return x[0];
  for (Index i = 0; i + 1 < t.size(); ++i) {
    if (q <= t[i + 1]) {
      const double a = (q - t[i]) / (t[i + 1] - t[i]);
      return (1 - a) * x[i] + a * x[i + 1];
    }
  }
  return x[t.size() - 1];
}

// Mean squared error over masked indices, scalar loop.
template <typename S>
S masked_mse(const unimotion::Matrix<S>& recon, const unimotion::Matrix<S>& target,
             const std::vector<Index>& indices) {
  S sum = 0;
  Index count = 0;
  for (size_t i = 0; i < indices.size(); ++i) {
    for (Index c = 0; c < recon.cols(); ++c) {
      const S d = recon(indices[i], c) - target(static_cast<Index>(i), c);
      sum += d * d;
      ++count;
    }
  }
  return sum / S(count);
}

// Mean cross-entropy via explicit log-sum-exp.
template <typename S>
S cross_entropy(const unimotion::Matrix<S>& logits, const std::vector<int>& labels) {
  S total = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    S mx = logits(i, 0);
    for (Index k = 1; k < logits.cols(); ++k) mx = std::max(mx, logits(i, k));
    S lse = 0;
    for (Index k = 0; k < logits.cols(); ++k) lse += std::exp(logits(i, k) - mx);
    lse = std::log(lse) + mx;
    total += lse - logits(i, static_cast<Index>(labels[static_cast<size_t>(i)]));
  }
  return total / S(logits.rows());
}

// Semantic hinge over ordered different-label pairs, double loop.
template <typename S>
S semantic(const unimotion::Matrix<S>& f, const std::vector<int>& labels,
           const unimotion::Matrix<S>& weight, const unimotion::Matrix<S>& margin) {
  S sum = 0;
  Index pairs = 0;
  for (Index i = 0; i < f.rows(); ++i) {
    for (Index j = 0; j < f.rows(); ++j) {
      if (i == j) continue;
      const int yi = labels[static_cast<size_t>(i)], yj = labels[static_cast<size_t>(j)];
      if (yi == yj) continue;
      ++pairs;
      S d = 0;
      for (Index c = 0; c < f.cols(); ++c) {
        const S diff = f(i, c) - f(j, c);
        d += diff * diff;
      }
      d = std::sqrt(d);
      const S hinge = margin(yi, yj) - d;
      if (hinge > 0) sum += weight(yi, yj) * hinge;
    }
  }
  return pairs == 0 ? S(0) : sum / S(pairs);
}

// Supervised contrastive loss, brute-force double loop.
template <typename S>
S contrastive(const unimotion::Matrix<S>& z, const std::vector<int>& labels,
              S tau) {
  const Index n = z.rows();
  S total = 0;
  Index anchors = 0;
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> positives;
    for (Index p = 0; p < n; ++p)
      if (p != i && labels[static_cast<size_t>(p)] == labels[static_cast<size_t>(i)])
        positives.push_back(p);
    if (positives.empty()) continue;
    ++anchors;
    S denom = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i) denom += std::exp(z.row(i).dot(z.row(j)) / tau);
    S li = 0;
    for (Index p : positives)
      li += -std::log(std::exp(z.row(i).dot(z.row(p)) / tau) / denom);
    total += li / S(positives.size());
  }
  return anchors == 0 ? S(0) : total / S(anchors);
}

// Central finite difference of a scalar function over a flat parameter array.
template <typename S, typename F>
void central_difference(S* params, Index count, F&& loss_fn, S step,
                        unimotion::Vector<S>& grad_out) {
  grad_out.resize(count);
  for (Index i = 0; i < count; ++i) {
    const S saved = params[i];
    params[i] = saved + step;
    const S up = loss_fn();
    params[i] = saved - step;
    const S down = loss_fn();
    params[i] = saved;
    grad_out[i] = (up - down) / (2 * step);
  }
}

// Norm-based relative error between analytic and numeric gradients. Both
// vectors below the absolute floor count as matching zero gradients (finite
// differences of an exactly-zero gradient return pure roundoff noise).
template <typename S>
S relative_error(const unimotion::Vector<S>& a, const unimotion::Vector<S>& b,
                 S zero_floor = S(1e-7)) {
  const S denom = std::max(a.norm(), b.norm());
  if (denom < zero_floor) return S(0);
  return (a - b).norm() / denom;
}

}  // namespace oracles

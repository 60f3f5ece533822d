#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "unimotion/errors.hpp"
#include "unimotion/rng.hpp"
#include "unimotion/signal.hpp"
#include "unimotion/types.hpp"

namespace unimotion {

enum class MaskMode {
  kFocused,  // budget split nucleus_share inside the nucleus
  kRandom,   // spans placed uniformly over the window (ablation baseline)
};

struct MaskConfig {
  double mask_ratio = 0.15;
  double nucleus_share = 0.8;
  int span_min = 4;
  int span_max = 5;
  uint64_t rng_seed = 0;
  MaskMode mode = MaskMode::kFocused;

  void validate() const {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
      throw InvalidConfig("MaskConfig: mask_ratio must be in (0,1)");
    if (!(nucleus_share >= 0.0 && nucleus_share <= 1.0))
      throw InvalidConfig("MaskConfig: nucleus_share must be in [0,1]");
    if (span_min < 1 || span_min > span_max)
      throw InvalidConfig("MaskConfig: require 1 <= span_min <= span_max");
  }
};

struct MaskPlan {
  BoolArray masked;                // T
  Index in_nucleus_count = 0;
  Index out_nucleus_count = 0;
  std::vector<Interval> spans;     // maximal contiguous masked runs
  bool nucleus_fallback = false;   // empty nucleus, whole budget placed outside

  Index total() const { return in_nucleus_count + out_nucleus_count; }
};

namespace detail {

// Place non-overlapping spans of length uniform in [span_min, span_max] into
// the free intervals until `budget` positions are covered (the last span is
// truncated to the remaining budget). Returns the number of positions placed.
inline Index place_spans(std::vector<Interval> free, Index budget, int span_min,
                         int span_max, BoolArray& masked, Rng& rng) {
  Index placed = 0;
  while (placed < budget && !free.empty()) {
    Index len = span_min + static_cast<Index>(rng.uniform_int(
                               static_cast<uint64_t>(span_max - span_min + 1)));
    len = std::min(len, budget - placed);
    // candidate start positions across intervals that can hold `len`
    Index starts = 0;
    for (const auto& [s, e] : free)
      if (e - s >= len) starts += e - s - len + 1;
    if (starts == 0) {
      // no interval fits: truncate to the longest remaining interval
      size_t widest = 0;
      for (size_t i = 1; i < free.size(); ++i)
        if (free[i].second - free[i].first >
            free[widest].second - free[widest].first)
          widest = i;
      len = free[widest].second - free[widest].first;
      starts = 1;
    }
    Index pick = static_cast<Index>(rng.uniform_int(static_cast<uint64_t>(starts)));
    size_t chosen = 0;
    Index start = -1;
    for (size_t i = 0; i < free.size(); ++i) {
      const Index avail = free[i].second - free[i].first - len + 1;
      if (avail <= 0) continue;
      if (pick < avail) {
        chosen = i;
        start = free[i].first + pick;
        break;
      }
      pick -= avail;
    }
    masked.segment(start, len).setConstant(true);
    placed += len;
    // split the chosen interval around the new span
    const Interval old = free[chosen];
    free.erase(free.begin() + static_cast<long>(chosen));
    if (start > old.first) free.emplace_back(old.first, start);
    if (start + len < old.second) free.emplace_back(start + len, old.second);
    std::sort(free.begin(), free.end());
  }
  return placed;
}

inline std::vector<Interval> runs_of(const BoolArray& flags) {
  std::vector<Interval> runs;
  Index t = 0;
  const Index n = flags.size();
  while (t < n) {
    if (!flags[t]) {
      ++t;
      continue;
    }
    Index s = t;
    while (t < n && flags[t]) ++t;
    runs.emplace_back(s, t);
  }
  return runs;
}

}  // namespace detail

/// Build the pretraining mask plan. Budget = round(mask_ratio * non-padded
/// count); nucleus_share of it goes inside the nucleus as contiguous spans,
/// the remainder outside as single positions. Deterministic given the rng.
inline MaskPlan plan_masks(const NucleusMask& nucleus, const BoolArray& pad_mask,
                           const MaskConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index t_len = pad_mask.size();
  const Index non_padded = t_len - pad_mask.count();
  const Index budget = std::lround(cfg.mask_ratio * static_cast<double>(non_padded));
  if (budget > non_padded)
    throw InvalidConfig("plan_masks: mask budget exceeds non-padded count");

  MaskPlan plan;
  plan.masked = BoolArray::Constant(t_len, false);

  if (cfg.mode == MaskMode::kRandom) {
    BoolArray free_flags = !pad_mask;
    detail::place_spans(detail::runs_of(free_flags), budget, cfg.span_min,
                        cfg.span_max, plan.masked, rng);
  } else {
    const Index nucleus_size = nucleus.in_nucleus.count();
    Index budget_in = std::min<Index>(
        std::lround(cfg.nucleus_share * static_cast<double>(budget)), nucleus_size);
    plan.nucleus_fallback = nucleus_size == 0 && budget > 0;

    if (budget_in > 0)
      detail::place_spans(nucleus.regions, budget_in, cfg.span_min, cfg.span_max,
                          plan.masked, rng);

    // remainder outside the nucleus, single positions without replacement
    Index budget_out = budget - budget_in;
    std::vector<Index> outside;
    for (Index t = 0; t < t_len; ++t)
      if (!pad_mask[t] && !nucleus.in_nucleus[t]) outside.push_back(t);
    const Index take = std::min<Index>(budget_out, outside.size());
    for (size_t pos : rng.sample_without_replacement(outside.size(), take))
      plan.masked[outside[pos]] = true;

    // overflow (nucleus nearly covers the window): spill back into free
    // nucleus positions so the total budget stays exact
    Index overflow = budget_out - take;
    if (overflow > 0) {
      std::vector<Index> free_in;
      for (Index t = 0; t < t_len; ++t)
        if (nucleus.in_nucleus[t] && !plan.masked[t]) free_in.push_back(t);
      for (size_t pos : rng.sample_without_replacement(free_in.size(),
                                                       std::min<Index>(overflow, free_in.size())))
        plan.masked[free_in[pos]] = true;
    }
  }

  for (Index t = 0; t < t_len; ++t) {
    if (!plan.masked[t]) continue;
    if (nucleus.in_nucleus.size() == t_len && nucleus.in_nucleus[t])
      ++plan.in_nucleus_count;
    else
      ++plan.out_nucleus_count;
  }
  plan.spans = detail::runs_of(plan.masked);
  return plan;
}

inline MaskPlan plan_masks(const NucleusMask& nucleus, const BoolArray& pad_mask,
                           const MaskConfig& cfg) {
  Rng rng(cfg.rng_seed);
  return plan_masks(nucleus, pad_mask, cfg, rng);
}

template <typename Scalar>
struct MaskedWindow {
  IMUWindow<Scalar> window;    // masked timesteps zeroed across channels
  Matrix<Scalar> target;       // original values at masked timesteps, in order
  std::vector<Index> indices;  // masked timesteps, ascending
};

/// Zero the masked timesteps and return the original values as the
/// reconstruction target.
template <typename Scalar>
MaskedWindow<Scalar> apply_masks(const IMUWindow<Scalar>& w, const MaskPlan& plan) {
  if (plan.masked.size() != w.len())
    throw InvalidInput("apply_masks: plan length mismatch");
  MaskedWindow<Scalar> out;
  out.window = w;
  out.indices.reserve(plan.total());
  for (Index t = 0; t < w.len(); ++t)
    if (plan.masked[t]) out.indices.push_back(t);
  out.target.resize(static_cast<Index>(out.indices.size()), kNumChannels);
  for (size_t i = 0; i < out.indices.size(); ++i) {
    out.target.row(static_cast<Index>(i)) = w.samples.row(out.indices[i]);
    out.window.samples.row(out.indices[i]).setZero();
  }
  return out;
}

}  // namespace unimotion

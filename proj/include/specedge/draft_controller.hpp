// Copyright 2026 The specedge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Stop-at-first-predicted-rejection drafting and wasted-token accounting.
//
// A policy is any type with `bool predicts_accept(const DraftWindow&, int i)`.
// Policies may look at realized outcomes (oracles, synthetic predictors used
// for Monte Carlo studies); the deployed one only sees draft features.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "specedge/errors.hpp"
#include "specedge/predictor.hpp"
#include "specedge/rng.hpp"
#include "specedge/workload.hpp"

namespace specedge::controller {

using workload::DraftWindow;

template <class P>
concept DraftPolicy = requires(const P& p, const DraftWindow& w, int i) {
  { p.predicts_accept(w, i) } -> std::convertible_to<bool>;
};

struct MlpPolicy {
  PredictorModel model;
  bool predicts_accept(const DraftWindow& w, int i) const {
    return model.predicts_accept(extract_features(w.steps[static_cast<std::size_t>(i)]));
  }
};

struct ConstantPolicy {
  bool accept = true;
  bool predicts_accept(const DraftWindow&, int) const { return accept; }
};

struct OraclePolicy {
  bool predicts_accept(const DraftWindow& w, int i) const { return w.accepted[static_cast<std::size_t>(i)] != 0; }
};

// Predicts accept on a truly accepted token with probability `recall` and on a
// truly rejected one with probability `fpr`. The uniform is keyed by
// (seed, window, position), so two instances sharing a seed are coupled: the
// lower-fpr one predicts accept on a subset of the positions the other does.
struct NoisyOraclePolicy {
  double fpr = 0.0;
  double recall = 1.0;
  std::uint64_t seed = 0;
  bool predicts_accept(const DraftWindow& w, int i) const {
    const double u = Rng(seed).split({w.id, static_cast<std::uint64_t>(i)}).uniform();
    return w.accepted[static_cast<std::size_t>(i)] ? u < recall : u < fpr;
  }
};

struct DraftPolicyOutcome {
  int k_theta = 0;                    // tokens submitted for verification
  bool stopped_by_predictor = false;
  int leading_accepts = 0;            // predicted accepts before the stop (stop excluded)
};

// The stopping token is part of the submitted block, so k_theta >= 1.
template <DraftPolicy P>
DraftPolicyOutcome draft_until_stop(const DraftWindow& w, const P& policy, int k_max) {
  require(k_max >= 1, "draft_until_stop: k_max must be >= 1");
  require(w.size() >= k_max, "draft_until_stop: window shorter than k_max");
  for (int i = 0; i < k_max; ++i)
    if (!policy.predicts_accept(w, i)) return {i + 1, true, i};
  return {k_max, false, k_max};
}

enum class StopConvention {
  kInclusive,  // waste over the submitted block (deployed behaviour)
  kExclusive,  // waste over the leading predicted accepts only
};

inline int wasted_tokens(const DraftWindow& w, const DraftPolicyOutcome& o,
                         StopConvention c = StopConvention::kInclusive) {
  const int k = c == StopConvention::kInclusive ? o.k_theta : o.leading_accepts;
  return std::max(0, k - (w.first_rejection() - 1));
}

inline double empirical_wdt(std::span<const int> wasted, double tau_d) {
  require(!wasted.empty(), "empirical_wdt: need at least one trial");
  require(tau_d >= 0.0, "empirical_wdt: tau_d must be non-negative");
  double sum = 0.0;
  for (int w : wasted) sum += tau_d * w;
  return sum / static_cast<double>(wasted.size());
}

struct WasteStudy {
  int k_max = 0;
  std::size_t n = 0;
  double mean_wasted = 0.0;
  double se_wasted = 0.0;
  std::vector<double> p_stop;     // P(R = r), r = 1..k_max (index r-1)
  std::vector<double> fp;         // P(predicted accept at r | R = r)
  double bound = 0.0;             // sum_r (k_max - r + 1) P(R = r) FP(r)
  double bound_se = 0.0;
  std::vector<int> wasted;        // per-window waste

  double mean_wdt_s(double tau_d) const { return tau_d * mean_wasted; }
};

namespace detail {
inline void mean_se(const std::vector<double>& x, double& mean, double& se) {
  mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  se = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size())) : 0.0;
}
}  // namespace detail

// The bound is the sample mean of (k_max - R + 1) * 1[R <= k_max] * Z_R, whose
// expectation equals the per-position sum.
template <DraftPolicy P>
WasteStudy study_waste(std::span<const DraftWindow> windows, const P& policy, int k_max,
                       StopConvention c = StopConvention::kExclusive) {
  require(!windows.empty(), "study_waste: no windows");
  WasteStudy s;
  s.k_max = k_max;
  s.n = windows.size();
  std::vector<double> w_vals, b_vals;
  std::vector<double> stops(static_cast<std::size_t>(k_max), 0.0), fps(static_cast<std::size_t>(k_max), 0.0);
  w_vals.reserve(windows.size());
  b_vals.reserve(windows.size());
  for (const auto& w : windows) {
    const auto o = draft_until_stop(w, policy, k_max);
    const int waste = wasted_tokens(w, o, c);
    s.wasted.push_back(waste);
    w_vals.push_back(waste);
    const int r = w.first_rejection();
    double b = 0.0;
    if (r <= k_max) {
      stops[static_cast<std::size_t>(r - 1)] += 1.0;
      if (policy.predicts_accept(w, r - 1)) {
        fps[static_cast<std::size_t>(r - 1)] += 1.0;
        b = k_max - r + 1;
      }
    }
    b_vals.push_back(b);
  }
  for (std::size_t r = 0; r < stops.size(); ++r) {
    s.fp.push_back(stops[r] > 0 ? fps[r] / stops[r] : 0.0);
    s.p_stop.push_back(stops[r] / static_cast<double>(s.n));
  }
  detail::mean_se(w_vals, s.mean_wasted, s.se_wasted);
  detail::mean_se(b_vals, s.bound, s.bound_se);
  return s;
}

}  // namespace specedge::controller

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

// Per-iteration records and the measurements derived from them: violation
// rates, goodput, spike-based violation attribution and capacity search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"

namespace specedge::sim {

enum class Attribution { kNone, kQueueDominant, kComputeDominant };

inline std::string_view attribution_name(Attribution a) {
  switch (a) {
    case Attribution::kNone: return "none";
    case Attribution::kQueueDominant: return "queue_dominant";
    case Attribution::kComputeDominant: return "compute_dominant";
  }
  return "?";
}

struct IterationRecord {
  std::uint64_t request_id = 0;
  int device = 0;
  int slo_class = 0;          // index into the class list
  double slo_speed = 0.0;     // s_c
  double iter_start = 0.0;    // drafting began
  double arrival = 0.0;       // a_i at the server
  double dispatch = 0.0;
  double completion = 0.0;    // batch finished on the server
  double deadline = 0.0;
  double t_draft = 0.0;
  double t_network = 0.0;
  double t_queue = 0.0;
  double t_verify = 0.0;
  int k = 0;                  // drafted
  int l = 0;                  // accepted
  int w = 0;                  // wasted
  int n_verified = 0;         // committed output tokens
  double speed = 0.0;
  bool violated = false;
  bool born_violated = false;
  bool dropped = false;
  bool spiked = false;        // verified in a batch with an injected slowdown
  std::uint64_t batch_id = 0;
  Attribution attribution = Attribution::kNone;

  double delivered() const { return iter_start + t_draft + t_network + t_queue + t_verify; }
};

// Speed recomputed from the stored components; used as a self-check.
inline double recompute_speed(const IterationRecord& r) {
  const double total = r.t_draft + r.t_network + r.t_queue + r.t_verify;
  return total > 0.0 ? r.n_verified / total : 0.0;
}

enum class MovingAverageMode { kEvents, kBatches };

// rho = t_verify / mean of the previous `window` t_verify values. History only
// includes records that completed strictly earlier, so members of one batch
// never average over each other. With no history yet, rho is taken as 1.
inline std::vector<Attribution> attribute_violations(std::span<const IterationRecord> records, int window,
                                                     double rho_threshold,
                                                     MovingAverageMode mode = MovingAverageMode::kEvents) {
  require(window >= 1, "attribute_violations: window must be >= 1");
  require(rho_threshold > 1.0, "attribute_violations: threshold must exceed 1");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (records[a].completion != records[b].completion) return records[a].completion < records[b].completion;
    return records[a].batch_id < records[b].batch_id;
  });
  std::vector<Attribution> out(records.size(), Attribution::kNone);
  std::deque<double> history;
  double sum = 0.0;
  auto push = [&](double v) {
    history.push_back(v);
    sum += v;
    if (static_cast<int>(history.size()) > window) {
      sum -= history.front();
      history.pop_front();
    }
  };
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const double t = records[order[i]].completion;
    while (j < order.size() && records[order[j]].completion == t) ++j;
    const double ma = history.empty() ? 0.0 : sum / static_cast<double>(history.size());
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = records[order[k]];
      if (!r.violated) continue;
      const double rho = ma > 0.0 ? r.t_verify / ma : 1.0;
      out[order[k]] = rho > rho_threshold ? Attribution::kComputeDominant : Attribution::kQueueDominant;
    }
    if (mode == MovingAverageMode::kEvents) {
      for (std::size_t k = i; k < j; ++k) push(records[order[k]].t_verify);
    } else {
      push(records[order[i]].t_verify);
    }
    i = j;
  }
  return out;
}

// Committed tokens per second over `span_s`.
inline double goodput(std::span<const IterationRecord> records, double span_s) {
  require(span_s > 0.0, "goodput: span must be positive");
  double tokens = 0.0;
  for (const auto& r : records) tokens += r.n_verified;
  return tokens / span_s;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "pearson: need two equally sized samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
}

struct CapacityResult {
  int capacity = 0;
  double violation_at_capacity = 0.0;
  std::vector<std::pair<int, double>> evaluated;  // (N, violation rate), ascending N
};

// Largest N among `sweep` whose violation rate is <= epsilon, 0 if none.
// With `refine`, the gap between that N and the next failing sweep point is
// bisected (assumes the rate is monotone inside the gap).
inline CapacityResult capacity(std::span<const int> sweep, const std::function<double(int)>& rate, double epsilon,
                               bool refine = false) {
  require(epsilon > 0.0 && epsilon <= 1.0, "capacity: epsilon must be in (0, 1]");
  require(!sweep.empty(), "capacity: empty sweep");
  std::vector<int> ns(sweep.begin(), sweep.end());
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  require(ns.front() >= 1, "capacity: device counts must be positive");
  CapacityResult res;
  for (int n : ns) {
    const double v = rate(n);
    res.evaluated.emplace_back(n, v);
    if (v <= epsilon) {
      res.capacity = n;
      res.violation_at_capacity = v;
    }
  }
  std::optional<int> first_fail_above;
  for (const auto& [n, v] : res.evaluated)
    if (n > res.capacity && v > epsilon) {
      first_fail_above = n;
      break;
    }
  if (refine && first_fail_above) {
    int lo = res.capacity, hi = *first_fail_above;  // rate(lo) <= eps < rate(hi)
    while (hi - lo > 1) {
      const int mid = lo + (hi - lo) / 2;
      const double v = rate(mid);
      res.evaluated.emplace_back(mid, v);
      if (v <= epsilon) {
        lo = mid;
        res.capacity = mid;
        res.violation_at_capacity = v;
      } else {
        hi = mid;
      }
    }
    std::sort(res.evaluated.begin(), res.evaluated.end());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Trace output. Column order is part of the file format.

inline constexpr std::string_view kTraceHeader =
    "run_id,request_id,class,a_i,t_draft,t_network,t_queue,t_verify,K,L,W,n_verified,speed,violated,attribution";

inline void write_trace_row(std::ostream& os, std::string_view run_id, const IterationRecord& r) {
  using latency::format_double;
  os << run_id << ',' << r.request_id << ',' << r.slo_class << ',' << format_double(r.arrival) << ','
     << format_double(r.t_draft) << ',' << format_double(r.t_network) << ',' << format_double(r.t_queue) << ','
     << format_double(r.t_verify) << ',' << r.k << ',' << r.l << ',' << r.w << ',' << r.n_verified << ','
     << format_double(r.speed) << ',' << (r.violated ? 1 : 0) << ',' << attribution_name(r.attribution) << '\n';
}

// `meta` goes on a leading comment line; it is the only place for
// non-reproducible content such as timestamps.
inline void write_trace(std::ostream& os, std::string_view run_id, std::span<const IterationRecord> records,
                        std::string_view meta = {}) {
  if (!meta.empty()) os << "# " << meta << '\n';
  os << kTraceHeader << '\n';
  for (const auto& r : records) write_trace_row(os, run_id, r);
}

}  // namespace specedge::sim

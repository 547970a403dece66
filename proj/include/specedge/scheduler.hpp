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

// SLO-aware verification batch construction.
//
// Each dispatch epoch partitions the pending set into critical requests
// (clock past their latest start time) and the rest. Critical requests are
// admitted earliest-deadline-first until one does not fit, which ends the
// epoch; otherwise the remainder is filled by descending value density.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"

namespace specedge::sched {

using latency::BatchFeatures;
using latency::LatencyModel;
using latency::RequestShape;

struct VerificationRequest {
  std::uint64_t id = 0;
  double arrival = 0.0;        // a_i
  int slo_class = 0;
  double deadline = 0.0;       // d_i
  double est_verified = 0.0;   // g_i, expected verified tokens
  double est_cost = 0.0;       // v_i, solo verification time
  double est_memory = 0.0;     // m_i, KV pages
  std::int64_t l_new = 1;
  std::int64_t l_cached = 0;
  bool born_violated = false;  // server budget was already negative on arrival

  RequestShape shape() const { return {l_new, l_cached}; }
};

struct BatchPlan {
  std::vector<std::uint64_t> ids;  // admission order
  double predicted_time = 0.0;
  double total_memory = 0.0;
  double dispatch_time = 0.0;
  BatchFeatures features;
  double min_deadline = std::numeric_limits<double>::infinity();
  std::vector<std::uint64_t> dropped;  // expired requests removed under the drop policy
  int late_members = 0;                // members already infeasible on their own

  bool empty() const { return ids.empty(); }
  std::size_t size() const { return ids.size(); }
};

enum class ExpiredPolicy {
  kLiteral,     // pure greedy; an infeasible critical head yields an empty batch
  kDrop,        // remove requests whose deadline has passed
  kLateFirst,   // doomed requests first (EDF, memory and size only), then the greedy
  kBestEffort,  // run the greedy on feasible requests, let doomed ones ride along
};

inline std::string_view expired_policy_name(ExpiredPolicy p) {
  switch (p) {
    case ExpiredPolicy::kLiteral: return "literal";
    case ExpiredPolicy::kDrop: return "drop";
    case ExpiredPolicy::kLateFirst: return "late_first";
    case ExpiredPolicy::kBestEffort: return "best_effort";
  }
  return "?";
}

inline std::optional<ExpiredPolicy> parse_expired_policy(std::string_view s) {
  if (s == "literal") return ExpiredPolicy::kLiteral;
  if (s == "drop") return ExpiredPolicy::kDrop;
  if (s == "late_first") return ExpiredPolicy::kLateFirst;
  if (s == "best_effort") return ExpiredPolicy::kBestEffort;
  return std::nullopt;
}

enum class DispatchMode { kEventDriven, kPeriodic };

struct SchedulerConfig {
  double guard_delta = 0.01;           // s
  double memory_budget = 4096.0;       // pages, used when memory_budget_fn is empty
  std::function<double(double)> memory_budget_fn;
  int max_batch_size = 64;
  DispatchMode dispatch = DispatchMode::kEventDriven;
  double period = 0.01;                // s, periodic dispatch
  double min_dwell = 0.002;            // s, event-driven accumulation window
  ExpiredPolicy expired = ExpiredPolicy::kLiteral;
  std::optional<double> starvation_age;  // promote non-critical requests older than this
  int page_size = 16;                  // tokens per KV page

  double budget_at(double t) const { return memory_budget_fn ? memory_budget_fn(t) : memory_budget; }

  void validate() const {
    require(guard_delta >= 0.0, "SchedulerConfig: guard_delta must be >= 0");
    require(memory_budget > 0.0, "SchedulerConfig: memory_budget must be positive");
    require(max_batch_size >= 1, "SchedulerConfig: max_batch_size must be >= 1");
    require(period > 0.0 && min_dwell >= 0.0, "SchedulerConfig: bad dispatch timing");
    require(page_size >= 1, "SchedulerConfig: page_size must be >= 1");
    require(!starvation_age || *starvation_age >= 0.0, "SchedulerConfig: starvation_age must be >= 0");
  }
};

// U = g / v.
inline double utility(double g_hat, double v_hat) {
  require(v_hat > 0.0, "utility: cost estimate must be positive");
  return g_hat / v_hat;
}

// LST = d - v - delta.
inline double latest_start_time(double deadline, double v_hat, double delta) {
  require(delta >= 0.0 && v_hat >= 0.0, "latest_start_time: negative cost or guard");
  return deadline - v_hat - delta;
}

inline double memory_pages(std::int64_t tokens, int page_size) {
  return std::ceil(static_cast<double>(tokens) / page_size);
}

struct RequestEstimate {
  std::uint64_t id = 0;
  double arrival = 0.0;
  int slo_class = 0;
  double server_budget = 0.0;  // tau, may be negative
  double alpha_hat = 0.0;
  int n_draft = 1;
  std::int64_t l_new = 1;
  std::int64_t l_cached = 0;
};

// Fills the derived estimates: deadline from the budget, g = alpha * N_d,
// v from the singleton batch, and memory for the context plus the extra token.
inline VerificationRequest make_request(const RequestEstimate& e, const LatencyModel& model, int page_size = 16) {
  require(e.l_new >= 1 && e.l_cached >= 0, "make_request: invalid lengths");
  require(e.n_draft >= 1, "make_request: empty draft");
  VerificationRequest r;
  r.id = e.id;
  r.arrival = e.arrival;
  r.slo_class = e.slo_class;
  r.born_violated = e.server_budget < 0.0;
  r.deadline = e.arrival + std::max(0.0, e.server_budget);
  r.est_verified = e.alpha_hat * e.n_draft;
  r.l_new = e.l_new;
  r.l_cached = e.l_cached;
  r.est_cost = latency::predict_batch_time(model, latency::request_features(r.shape()));
  r.est_memory = memory_pages(e.l_cached + e.l_new + 1, page_size);
  return r;
}

inline void add_to_plan(BatchPlan& b, const VerificationRequest& r, const LatencyModel& model) {
  b.ids.push_back(r.id);
  b.features += latency::request_features(r.shape());
  b.total_memory += r.est_memory;
  b.min_deadline = std::min(b.min_deadline, r.deadline);
  b.predicted_time = latency::predict_batch_time(model, b.features);
}

// Memory and joint-deadline check on B' = B + {candidate}; no side effects.
inline bool feasible_add(const BatchPlan& batch, const VerificationRequest& cand, double t_k, double memory_budget,
                         const LatencyModel& model) {
  if (batch.total_memory + cand.est_memory > memory_budget) return false;
  const double t = latency::predict_batch_time(model, batch.features + latency::request_features(cand.shape()));
  return t_k + t <= std::min(batch.min_deadline, cand.deadline);
}

namespace detail {

inline bool edf_less(const VerificationRequest& a, const VerificationRequest& b) {
  if (a.deadline != b.deadline) return a.deadline < b.deadline;
  if (a.arrival != b.arrival) return a.arrival < b.arrival;
  return a.id < b.id;
}

inline bool arrival_less(const VerificationRequest& a, const VerificationRequest& b) {
  if (a.arrival != b.arrival) return a.arrival < b.arrival;
  return a.id < b.id;
}

struct Partition {
  std::vector<VerificationRequest> critical;
  std::vector<VerificationRequest> normal;
};

inline bool is_critical(const VerificationRequest& r, double t_k, const SchedulerConfig& cfg) {
  if (t_k >= latest_start_time(r.deadline, r.est_cost, cfg.guard_delta)) return true;
  return cfg.starvation_age && t_k - r.arrival > *cfg.starvation_age;
}

inline Partition partition(std::span<const VerificationRequest> pending, double t_k, const SchedulerConfig& cfg) {
  Partition p;
  for (const auto& r : pending) (is_critical(r, t_k, cfg) ? p.critical : p.normal).push_back(r);
  std::sort(p.critical.begin(), p.critical.end(), edf_less);
  std::sort(p.normal.begin(), p.normal.end(), [](const auto& a, const auto& b) {
    const double ua = utility(a.est_verified, a.est_cost), ub = utility(b.est_verified, b.est_cost);
    if (ua != ub) return ua > ub;
    return arrival_less(a, b);
  });
  return p;
}

inline BatchPlan greedy(std::span<const VerificationRequest> pending, double t_k, const SchedulerConfig& cfg,
                        const LatencyModel& model, BatchPlan b = {}) {
  b.dispatch_time = t_k;
  b.predicted_time = latency::predict_batch_time(model, b.features);
  const double budget = cfg.budget_at(t_k);
  const auto p = partition(pending, t_k, cfg);
  auto fits = [&](const VerificationRequest& r) {
    return static_cast<int>(b.size()) < cfg.max_batch_size && feasible_add(b, r, t_k, budget, model);
  };
  bool stop = false;
  for (const auto& r : p.critical) {
    if (!fits(r)) {
      stop = true;
      break;
    }
    add_to_plan(b, r, model);
  }
  if (!stop)
    for (const auto& r : p.normal) {
      if (!fits(r)) break;
      add_to_plan(b, r, model);
    }
  return b;
}

inline bool infeasible_alone(const VerificationRequest& r, double t_k, double budget, const LatencyModel& model) {
  return !feasible_add(BatchPlan{}, r, t_k, budget, model);
}

}  // namespace detail

inline BatchPlan schedule_epoch(std::span<const VerificationRequest> pending, double t_k, const SchedulerConfig& cfg,
                                const LatencyModel& model) {
  require(t_k >= 0.0, "schedule_epoch: negative epoch time");
  switch (cfg.expired) {
    case ExpiredPolicy::kLiteral:
      return detail::greedy(pending, t_k, cfg, model);
    case ExpiredPolicy::kDrop: {
      std::vector<VerificationRequest> live;
      std::vector<std::uint64_t> dropped;
      for (const auto& r : pending) (r.deadline < t_k ? dropped.push_back(r.id) : live.push_back(r));
      auto b = detail::greedy(live, t_k, cfg, model);
      std::sort(dropped.begin(), dropped.end());
      b.dropped = std::move(dropped);
      return b;
    }
    case ExpiredPolicy::kLateFirst: {
      const double budget = cfg.budget_at(t_k);
      std::vector<VerificationRequest> live, doomed;
      for (const auto& r : pending)
        (detail::infeasible_alone(r, t_k, budget, model) ? doomed : live).push_back(r);
      std::sort(doomed.begin(), doomed.end(), detail::edf_less);
      BatchPlan seed;
      for (const auto& r : doomed) {
        if (static_cast<int>(seed.size()) >= cfg.max_batch_size) break;
        if (seed.total_memory + r.est_memory > budget) continue;
        add_to_plan(seed, r, model);
        ++seed.late_members;
      }
      seed.min_deadline = std::numeric_limits<double>::infinity();
      return detail::greedy(live, t_k, cfg, model, std::move(seed));
    }
    case ExpiredPolicy::kBestEffort: {
      const double budget = cfg.budget_at(t_k);
      std::vector<VerificationRequest> live, doomed;
      for (const auto& r : pending)
        (detail::infeasible_alone(r, t_k, budget, model) ? doomed : live).push_back(r);
      auto b = detail::greedy(live, t_k, cfg, model);
      std::sort(doomed.begin(), doomed.end(), detail::edf_less);
      // Doomed requests join while memory, size and the deadlines of the
      // feasible members still hold. With no feasible members the batch is
      // limited by memory and size only.
      for (const auto& r : doomed) {
        if (static_cast<int>(b.size()) >= cfg.max_batch_size) break;
        if (b.total_memory + r.est_memory > budget) {
          if (b.empty()) continue;  // cannot fit even alone; skip rather than stall
          break;
        }
        const double t = latency::predict_batch_time(model, b.features + latency::request_features(r.shape()));
        if (b.size() > static_cast<std::size_t>(b.late_members) && t_k + t > b.min_deadline) break;
        const double keep_min = b.min_deadline;
        add_to_plan(b, r, model);
        b.min_deadline = keep_min;  // only feasible members constrain the batch
        ++b.late_members;
      }
      return b;
    }
  }
  return {};
}

// SLO-agnostic baseline: arrival order, memory and size limits only.
inline BatchPlan schedule_fcfs(std::span<const VerificationRequest> pending, double t_k, const SchedulerConfig& cfg,
                               const LatencyModel& model) {
  require(t_k >= 0.0, "schedule_fcfs: negative epoch time");
  std::vector<VerificationRequest> order(pending.begin(), pending.end());
  std::sort(order.begin(), order.end(), detail::arrival_less);
  BatchPlan b;
  b.dispatch_time = t_k;
  b.predicted_time = latency::predict_batch_time(model, {});
  const double budget = cfg.budget_at(t_k);
  for (const auto& r : order) {
    if (static_cast<int>(b.size()) >= cfg.max_batch_size || b.total_memory + r.est_memory > budget) {
      if (b.empty() && r.est_memory > budget) continue;  // never dispatchable; avoid a permanent stall
      break;
    }
    add_to_plan(b, r, model);
  }
  return b;
}

inline constexpr std::size_t kOracleMaxRequests = 16;

// Exhaustive search for the feasible subset with the largest total g.
// Ties: fewer requests, then lexicographically smaller sorted id list.
inline BatchPlan knapsack_oracle(std::span<const VerificationRequest> pending, double t_k, const SchedulerConfig& cfg,
                                 const LatencyModel& model) {
  require(pending.size() <= kOracleMaxRequests, "knapsack_oracle: too many requests for enumeration");
  std::vector<VerificationRequest> req(pending.begin(), pending.end());
  std::sort(req.begin(), req.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const double budget = cfg.budget_at(t_k);
  const std::uint32_t n = static_cast<std::uint32_t>(req.size());

  std::uint32_t best_mask = 0;
  double best_value = 0.0;
  int best_count = 0;
  auto ids_less = [&](std::uint32_t a, std::uint32_t b) {
    // Compare sorted id lists; ids are already sorted by bit index.
    for (std::uint32_t i = 0; i < n; ++i) {
      const bool ia = a >> i & 1U, ib = b >> i & 1U;
      if (ia != ib) return ia;  // the list containing the smaller id first is smaller
    }
    return false;
  };
  for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
    const int count = std::popcount(mask);
    if (count > cfg.max_batch_size) continue;
    BatchFeatures f;
    double mem = 0.0, value = 0.0, dmin = std::numeric_limits<double>::infinity();
    for (std::uint32_t i = 0; i < n; ++i)
      if (mask >> i & 1U) {
        f += latency::request_features(req[i].shape());
        mem += req[i].est_memory;
        value += req[i].est_verified;
        dmin = std::min(dmin, req[i].deadline);
      }
    if (mem > budget || t_k + latency::predict_batch_time(model, f) > dmin) continue;
    const bool better = value > best_value ||
                        (value == best_value && (count < best_count || (count == best_count && ids_less(mask, best_mask))));
    if (better) {
      best_mask = mask;
      best_value = value;
      best_count = count;
    }
  }
  BatchPlan b;
  b.dispatch_time = t_k;
  b.predicted_time = latency::predict_batch_time(model, {});
  for (std::uint32_t i = 0; i < n; ++i)
    if (best_mask >> i & 1U) add_to_plan(b, req[i], model);
  return b;
}

inline double plan_value(const BatchPlan& b, std::span<const VerificationRequest> pending) {
  double v = 0.0;
  for (auto id : b.ids)
    for (const auto& r : pending)
      if (r.id == id) v += r.est_verified;
  return v;
}

}  // namespace specedge::sched

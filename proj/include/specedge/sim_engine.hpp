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

// Discrete-event simulation of many drafting devices sharing one verifier.
//
// Each device runs closed-loop: draft a block, send it, wait for the verdict,
// repeat. The server forms batches at dispatch epochs with the configured
// scheduler and executes one batch at a time; the latency model both feeds
// the scheduler's estimates and, with multiplicative noise, sets the actual
// batch duration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "specedge/draft_controller.hpp"
#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"
#include "specedge/metrics.hpp"
#include "specedge/predictor.hpp"
#include "specedge/rng.hpp"
#include "specedge/scheduler.hpp"
#include "specedge/spec_core.hpp"
#include "specedge/workload.hpp"

namespace specedge::sim {

enum class SchedulerKind { kWisp, kFcfs };
enum class DraftMode { kPredictor, kFixed, kOracle };

inline std::string_view scheduler_name(SchedulerKind k) { return k == SchedulerKind::kWisp ? "wisp" : "fcfs"; }

inline std::string_view draft_mode_name(DraftMode m) {
  switch (m) {
    case DraftMode::kPredictor: return "predictor";
    case DraftMode::kFixed: return "fixed";
    case DraftMode::kOracle: return "oracle";
  }
  return "?";
}

struct SimConfig {
  int n_devices = 8;
  std::vector<double> slo_speeds = {2.0, 4.0, 6.0, 8.0};
  std::vector<double> class_weights = {1.0, 1.0, 1.0, 1.0};

  // Per-device parameters are drawn uniformly from these ranges.
  double draft_speed_min = 50.0;
  double draft_speed_max = 50.0;
  double rtt_min = 0.01;
  double rtt_max = 0.04;
  double rtt_jitter = 0.0;      // extra uniform delay per leg, seconds
  double alpha_min = 0.7;
  double alpha_max = 0.7;
  int k_max = 8;
  workload::GeneratorConfig generator;

  SchedulerKind scheduler = SchedulerKind::kWisp;
  // Requests that can no longer meet their deadline are served first and do
  // not constrain the batch, so the server never stalls on them.
  sched::SchedulerConfig sched = [] {
    sched::SchedulerConfig s;
    s.expired = sched::ExpiredPolicy::kLateFirst;
    return s;
  }();
  DraftMode draft = DraftMode::kPredictor;
  std::optional<controller::PredictorModel> predictor;

  latency::LatencyModel model = latency::presets::kA100Qwen32B;
  double noise_sigma = 0.05;
  double spike_prob = 0.0;
  double spike_factor = 4.0;

  double duration = 60.0;
  double warmup_fraction = 0.1;
  int sessions_per_device = 0;  // 0: run for `duration`
  double alpha_ema = 0.2;
  bool prefix_cache = true;

  int attribution_window = 20;
  double attribution_rho = 1.5;
  MovingAverageMode attribution_mode = MovingAverageMode::kEvents;

  std::uint64_t seed = 0;

  void validate() const {
    if (n_devices < 1) throw ConfigError("n_devices", "must be at least 1");
    if (slo_speeds.empty()) throw ConfigError("slo_speeds", "class mix is empty");
    if (class_weights.size() != slo_speeds.size())
      throw ConfigError("class_weights", "must have one weight per SLO class");
    double wsum = 0.0;
    for (double w : class_weights) {
      if (!(w >= 0.0)) throw ConfigError("class_weights", "weights must be non-negative");
      wsum += w;
    }
    if (!(wsum > 0.0)) throw ConfigError("class_weights", "weights sum to zero");
    for (double s : slo_speeds)
      if (!(s > 0.0)) throw ConfigError("slo_speeds", "speeds must be positive");
    if (!(draft_speed_min > 0.0) || draft_speed_max < draft_speed_min)
      throw ConfigError("draft_speed_min", "need 0 < draft_speed_min <= draft_speed_max");
    if (!(rtt_min >= 0.0) || rtt_max < rtt_min) throw ConfigError("rtt_min", "need 0 <= rtt_min <= rtt_max");
    if (!(rtt_jitter >= 0.0)) throw ConfigError("rtt_jitter", "must be non-negative");
    if (!(alpha_min >= 0.0) || alpha_max < alpha_min || alpha_max > 1.0)
      throw ConfigError("alpha_min", "need 0 <= alpha_min <= alpha_max <= 1");
    if (k_max < 1) throw ConfigError("k_max", "must be at least 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma", "must be non-negative");
    if (!(spike_prob >= 0.0 && spike_prob <= 1.0)) throw ConfigError("spike_prob", "must be in [0, 1]");
    if (!(spike_factor >= 1.0)) throw ConfigError("spike_factor", "must be >= 1");
    if (!(duration > 0.0) || !std::isfinite(duration)) throw ConfigError("duration", "must be positive and finite");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction", "must be in [0, 1)");
    if (sessions_per_device < 0) throw ConfigError("sessions_per_device", "must be non-negative");
    if (!(alpha_ema > 0.0 && alpha_ema <= 1.0)) throw ConfigError("alpha_ema", "must be in (0, 1]");
    if (attribution_window < 1) throw ConfigError("attribution_window", "must be at least 1");
    if (!(attribution_rho > 1.0)) throw ConfigError("attribution_rho", "must exceed 1");
    if (!model.all_finite()) throw ConfigError("model", "coefficients must be finite");
    if (draft == DraftMode::kPredictor && !predictor)
      throw ConfigError("predictor", "draft mode 'predictor' needs a trained model");
    try {
      sched.validate();
      workload::DeviceProfile{draft_speed_min, rtt_min, 0, alpha_min, k_max}.validate();
      generator.validate();
    } catch (const ContractError& e) {
      throw ConfigError("scheduler", e.what());
    }
  }
};

struct BatchRecord {
  std::uint64_t id = 0;
  double dispatch = 0.0;
  double predicted = 0.0;
  double actual = 0.0;
  int size = 0;
  int late_members = 0;
  int cold_members = 0;  // first verification of a response, no cached prefix
  bool spiked = false;
};

struct ClassMetrics {
  double slo_speed = 0.0;
  std::size_t iterations = 0;
  std::size_t violations = 0;
  double violation_rate = 0.0;
  std::size_t compute_dominant = 0;
  std::size_t queue_dominant = 0;
};

struct SimMetrics {
  std::vector<ClassMetrics> classes;
  double goodput = 0.0;                       // committed tokens / s, whole system
  std::vector<double> device_goodput;
  std::vector<double> device_mean_wasted;
  double mean_wasted = 0.0;
  double mean_wdt_s = 0.0;
  double committed_fraction = 0.0;            // sum L / sum K
  double violation_rate = 0.0;
  std::size_t iterations = 0;
  std::size_t batches = 0;
  double mean_batch_size = 0.0;
  double mean_predicted_batch_s = 0.0;
  double mean_actual_batch_s = 0.0;
  double measured_span_s = 0.0;
};

struct SimResult {
  std::vector<IterationRecord> records;  // every completed iteration, completion order
  std::vector<BatchRecord> batches;
  SimMetrics metrics;
  double warmup_end = 0.0;
  double end_time = 0.0;
};

namespace detail {

enum class EventKind : int {
  kBatchComplete = 0,
  kResponseDelivered = 1,
  kDraftComplete = 2,
  kRequestArrive = 3,
  kEpochDispatch = 4,
  kSessionEnd = 5,
};

struct Event {
  double t = 0.0;
  EventKind kind = EventKind::kEpochDispatch;
  std::uint64_t seq = 0;
  int device = -1;

  friend bool operator>(const Event& a, const Event& b) {
    if (a.t != b.t) return a.t > b.t;
    if (a.kind != b.kind) return a.kind > b.kind;
    return a.seq > b.seq;
  }
};

struct Device {
  int index = 0;
  int slo_class = 0;
  double slo_speed = 0.0;
  double draft_speed = 0.0;
  double rtt = 0.0;
  double alpha_hat = 0.0;
  workload::DeviceProfile profile;
  std::optional<workload::SessionStream> stream;
  int session = 0;
  int committed = 0;  // tokens committed in the current session
  bool active = true;

  // Current iteration.
  workload::DraftWindow window;
  IterationRecord rec;
  double uplink = 0.0;
  double downlink = 0.0;
  std::int64_t l_new = 0;
  std::int64_t l_cached = 0;
};

// Smooth weighted round-robin: deterministic and proportional at every prefix.
inline std::vector<int> assign_classes(int n, const std::vector<double>& weights) {
  std::vector<double> current(weights.size(), 0.0);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
      current[c] += weights[c];
      if (current[c] > current[best]) best = c;
    }
    current[best] -= total;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace detail

class Simulator {
 public:
  explicit Simulator(SimConfig cfg) : cfg_(std::move(cfg)), root_(Rng(cfg_.seed).split("sim")) {
    cfg_.validate();
    if (cfg_.predictor) policy_model_ = controller::MlpPolicy{*cfg_.predictor};
  }

  SimResult run() {
    init_devices();
    while (!events_.empty()) {
      const auto ev = events_.top();
      if (ev.t > cfg_.duration) break;
      events_.pop();
      now_ = ev.t;
      switch (ev.kind) {
        case detail::EventKind::kBatchComplete: on_batch_complete(); break;
        case detail::EventKind::kResponseDelivered: on_response(devices_[static_cast<std::size_t>(ev.device)]); break;
        case detail::EventKind::kDraftComplete: on_draft_complete(devices_[static_cast<std::size_t>(ev.device)]); break;
        case detail::EventKind::kRequestArrive: on_arrive(devices_[static_cast<std::size_t>(ev.device)]); break;
        case detail::EventKind::kEpochDispatch: on_epoch(); break;
        case detail::EventKind::kSessionEnd: on_session_end(devices_[static_cast<std::size_t>(ev.device)]); break;
      }
    }
    result_.end_time = std::min(cfg_.duration, now_);
    if (cfg_.sessions_per_device == 0) result_.end_time = cfg_.duration;
    finalize();
    return std::move(result_);
  }

 private:
  void push(double t, detail::EventKind kind, int device = -1) { events_.push({t, kind, seq_++, device}); }

  void init_devices() {
    const auto classes = detail::assign_classes(cfg_.n_devices, cfg_.class_weights);
    for (int i = 0; i < cfg_.n_devices; ++i) {
      detail::Device d;
      d.index = i;
      d.slo_class = classes[static_cast<std::size_t>(i)];
      d.slo_speed = cfg_.slo_speeds[static_cast<std::size_t>(d.slo_class)];
      Rng r = root_.split({0xde7ULL, static_cast<std::uint64_t>(i)});
      d.draft_speed = r.uniform(cfg_.draft_speed_min, cfg_.draft_speed_max);
      d.rtt = r.uniform(cfg_.rtt_min, cfg_.rtt_max);
      const double alpha = r.uniform(cfg_.alpha_min, cfg_.alpha_max);
      d.alpha_hat = alpha;
      d.profile = workload::DeviceProfile{d.draft_speed, d.rtt, d.slo_class, alpha, cfg_.k_max};
      devices_.push_back(std::move(d));
    }
    // Stagger the first iterations over one nominal drafting period.
    for (auto& d : devices_) {
      start_session(d);
      const double offset = root_.split({0x5747ULL, static_cast<std::uint64_t>(d.index)}).uniform() *
                            cfg_.k_max / d.draft_speed;
      start_iteration(d, offset);
    }
  }

  void start_session(detail::Device& d) {
    Rng r = root_.split({0x5e55ULL, static_cast<std::uint64_t>(d.index), static_cast<std::uint64_t>(d.session)});
    d.stream.emplace(d.profile, cfg_.generator, r);
    d.committed = 0;
  }

  int choose_k(const detail::Device& d, int k_cap) const {
    switch (cfg_.draft) {
      case DraftMode::kFixed: return k_cap;
      case DraftMode::kOracle: return controller::draft_until_stop(d.window, controller::OraclePolicy{}, k_cap).k_theta;
      case DraftMode::kPredictor: return controller::draft_until_stop(d.window, *policy_model_, k_cap).k_theta;
    }
    return k_cap;
  }

  void start_iteration(detail::Device& d, double t0) {
    d.window = d.stream->next_window();
    const int remaining = d.stream->response_len() - d.committed;
    const int k = choose_k(d, std::max(1, std::min(cfg_.k_max, remaining)));
    d.rec = IterationRecord{};
    d.rec.device = d.index;
    d.rec.slo_class = d.slo_class;
    d.rec.slo_speed = d.slo_speed;
    d.rec.iter_start = t0;
    d.rec.k = k;
    d.rec.t_draft = k / d.draft_speed;
    Rng net = root_.split({0x4e7ULL, static_cast<std::uint64_t>(d.index), next_iteration_key_++});
    d.uplink = d.rtt / 2.0 + cfg_.rtt_jitter * net.uniform();
    d.downlink = d.rtt / 2.0 + cfg_.rtt_jitter * net.uniform();
    const int prompt = d.stream->prompt_len();
    if (!cfg_.prefix_cache) {
      d.l_cached = 0;
      d.l_new = prompt + d.committed + k;
    } else if (d.committed == 0) {
      d.l_cached = 0;
      d.l_new = prompt + k;
    } else {
      d.l_cached = prompt + d.committed;
      d.l_new = k;
    }
    push(t0 + d.rec.t_draft, detail::EventKind::kDraftComplete, d.index);
  }

  void on_draft_complete(detail::Device& d) { push(now_ + d.uplink, detail::EventKind::kRequestArrive, d.index); }

  void on_arrive(detail::Device& d) {
    d.rec.request_id = next_request_id_++;
    d.rec.arrival = now_;
    const double expected_net = d.rtt + cfg_.rtt_jitter;
    const double budget = spec::server_budget(d.alpha_hat, d.rec.k, d.slo_speed, d.rec.t_draft, expected_net);
    sched::RequestEstimate e{d.rec.request_id, now_, d.slo_class, budget, d.alpha_hat, d.rec.k, d.l_new, d.l_cached};
    auto req = sched::make_request(e, cfg_.model, cfg_.sched.page_size);
    d.rec.deadline = req.deadline;
    d.rec.born_violated = req.born_violated;
    pending_.push_back(req);
    owner_[req.id] = d.index;
    if (!busy_ && !epoch_scheduled_) schedule_epoch(now_ + (cfg_.sched.dispatch == sched::DispatchMode::kPeriodic
                                                                ? 0.0
                                                                : cfg_.sched.min_dwell));
  }

  void schedule_epoch(double t) {
    if (cfg_.sched.dispatch == sched::DispatchMode::kPeriodic)
      t = std::ceil(t / cfg_.sched.period - 1e-12) * cfg_.sched.period;
    epoch_scheduled_ = true;
    push(t, detail::EventKind::kEpochDispatch);
  }

  void on_epoch() {
    epoch_scheduled_ = false;
    if (busy_ || pending_.empty()) return;
    const auto plan = cfg_.scheduler == SchedulerKind::kWisp
                          ? sched::schedule_epoch(pending_, now_, cfg_.sched, cfg_.model)
                          : sched::schedule_fcfs(pending_, now_, cfg_.sched, cfg_.model);
    for (auto id : plan.dropped) drop_request(id);
    if (plan.empty()) {
      if (!pending_.empty()) schedule_epoch(now_ + std::max(cfg_.sched.min_dwell, 1e-3));
      return;
    }
    std::unordered_set<std::uint64_t> members(plan.ids.begin(), plan.ids.end());
    const auto cold = std::count_if(pending_.begin(), pending_.end(),
                                    [&](const auto& r) { return members.count(r.id) > 0 && r.l_cached == 0; });
    std::erase_if(pending_, [&](const auto& r) { return members.count(r.id) > 0; });

    BatchRecord b;
    b.id = next_batch_id_++;
    b.dispatch = now_;
    b.predicted = plan.predicted_time;
    b.size = static_cast<int>(plan.size());
    b.late_members = plan.late_members;
    b.cold_members = static_cast<int>(cold);
    Rng noise = root_.split({0xba7cULL, b.id});
    b.actual = b.predicted * (cfg_.noise_sigma > 0.0 ? std::exp(cfg_.noise_sigma * noise.normal()) : 1.0);
    if (cfg_.spike_prob > 0.0 && noise.bernoulli(cfg_.spike_prob)) {
      b.spiked = true;
      b.actual *= cfg_.spike_factor;
    }
    running_ = plan.ids;
    running_batch_ = b;
    busy_ = true;
    result_.batches.push_back(b);
    push(now_ + b.actual, detail::EventKind::kBatchComplete);
  }

  void drop_request(std::uint64_t id) {
    std::erase_if(pending_, [&](const auto& r) { return r.id == id; });
    auto& d = devices_[static_cast<std::size_t>(owner_.at(id))];
    owner_.erase(id);
    d.rec.dispatch = d.rec.completion = now_;
    d.rec.t_queue = now_ - d.rec.arrival;
    d.rec.dropped = true;
    d.rec.l = 0;
    d.rec.w = d.rec.k;
    d.rec.n_verified = 0;
    d.rec.t_network = d.uplink + d.downlink;
    push(now_ + d.downlink, detail::EventKind::kResponseDelivered, d.index);
  }

  void on_batch_complete() {
    busy_ = false;
    for (auto id : running_) {
      auto& d = devices_[static_cast<std::size_t>(owner_.at(id))];
      owner_.erase(id);
      auto& r = d.rec;
      r.batch_id = running_batch_.id;
      r.spiked = running_batch_.spiked;
      r.dispatch = running_batch_.dispatch;
      r.completion = now_;
      r.t_queue = r.dispatch - r.arrival;
      r.t_verify = r.completion - r.dispatch;
      r.t_network = d.uplink + d.downlink;
      r.l = d.window.accepted_len(r.k);
      r.w = spec::wasted_tokens(r.k, r.l);
      const int remaining = d.stream->response_len() - d.committed;
      r.n_verified = std::min(r.l + 1, remaining);
      push(now_ + d.downlink, detail::EventKind::kResponseDelivered, d.index);
    }
    running_.clear();
    if (!pending_.empty() && !epoch_scheduled_) schedule_epoch(now_);
  }

  void on_response(detail::Device& d) {
    auto& r = d.rec;
    r.speed = spec::achieved_speed(r.n_verified, r.t_draft, r.t_network, r.t_queue, r.t_verify);
    r.violated = r.speed < r.slo_speed;
    result_.records.push_back(r);
    if (!r.dropped) {
      d.alpha_hat = (1.0 - cfg_.alpha_ema) * d.alpha_hat + cfg_.alpha_ema * (static_cast<double>(r.l) / r.k);
      d.committed += r.n_verified;
    }
    if (d.committed >= d.stream->response_len()) {
      push(now_, detail::EventKind::kSessionEnd, d.index);
      return;
    }
    start_iteration(d, now_);
  }

  void on_session_end(detail::Device& d) {
    ++d.session;
    if (cfg_.sessions_per_device > 0 && d.session >= cfg_.sessions_per_device) {
      d.active = false;
      return;
    }
    start_session(d);
    start_iteration(d, now_);
  }

  void finalize() {
    auto& recs = result_.records;
    const auto labels = attribute_violations(recs, cfg_.attribution_window, cfg_.attribution_rho,
                                             cfg_.attribution_mode);
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].attribution = labels[i];

    const double warm = cfg_.warmup_fraction * result_.end_time;
    result_.warmup_end = warm;
    auto& m = result_.metrics;
    m.measured_span_s = std::max(result_.end_time - warm, 1e-12);
    m.classes.resize(cfg_.slo_speeds.size());
    for (std::size_t c = 0; c < cfg_.slo_speeds.size(); ++c) m.classes[c].slo_speed = cfg_.slo_speeds[c];
    m.device_goodput.assign(static_cast<std::size_t>(cfg_.n_devices), 0.0);
    std::vector<double> dev_w(static_cast<std::size_t>(cfg_.n_devices), 0.0), dev_n(dev_w.size(), 0.0);
    double tokens = 0.0, sum_w = 0.0, sum_l = 0.0, sum_k = 0.0, wdt = 0.0;
    std::size_t violations = 0;
    for (const auto& r : recs) {
      if (r.iter_start < warm) continue;
      ++m.iterations;
      auto& cm = m.classes[static_cast<std::size_t>(r.slo_class)];
      ++cm.iterations;
      if (r.violated) {
        ++cm.violations;
        ++violations;
        if (r.attribution == Attribution::kComputeDominant) ++cm.compute_dominant;
        if (r.attribution == Attribution::kQueueDominant) ++cm.queue_dominant;
      }
      tokens += r.n_verified;
      m.device_goodput[static_cast<std::size_t>(r.device)] += r.n_verified;
      dev_w[static_cast<std::size_t>(r.device)] += r.w;
      dev_n[static_cast<std::size_t>(r.device)] += 1.0;
      sum_w += r.w;
      sum_l += r.l;
      sum_k += r.k;
      wdt += r.w * (r.k > 0 ? r.t_draft / r.k : 0.0);
    }
    for (auto& cm : m.classes)
      cm.violation_rate = cm.iterations ? static_cast<double>(cm.violations) / static_cast<double>(cm.iterations) : 0.0;
    m.goodput = tokens / m.measured_span_s;
    for (auto& g : m.device_goodput) g /= m.measured_span_s;
    m.device_mean_wasted.resize(dev_w.size());
    for (std::size_t i = 0; i < dev_w.size(); ++i) m.device_mean_wasted[i] = dev_n[i] > 0 ? dev_w[i] / dev_n[i] : 0.0;
    if (m.iterations) {
      const double n = static_cast<double>(m.iterations);
      m.mean_wasted = sum_w / n;
      m.mean_wdt_s = wdt / n;
      m.violation_rate = static_cast<double>(violations) / n;
    }
    m.committed_fraction = sum_k > 0 ? sum_l / sum_k : 0.0;
    double size = 0.0, pred = 0.0, act = 0.0;
    for (const auto& b : result_.batches) {
      if (b.dispatch < warm) continue;
      ++m.batches;
      size += b.size;
      pred += b.predicted;
      act += b.actual;
    }
    if (m.batches) {
      const double n = static_cast<double>(m.batches);
      m.mean_batch_size = size / n;
      m.mean_predicted_batch_s = pred / n;
      m.mean_actual_batch_s = act / n;
    }
  }

  SimConfig cfg_;
  Rng root_;
  std::optional<controller::MlpPolicy> policy_model_;
  std::vector<detail::Device> devices_;
  std::priority_queue<detail::Event, std::vector<detail::Event>, std::greater<>> events_;
  std::vector<sched::VerificationRequest> pending_;
  std::unordered_map<std::uint64_t, int> owner_;
  std::vector<std::uint64_t> running_;
  BatchRecord running_batch_;
  bool busy_ = false;
  bool epoch_scheduled_ = false;
  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::uint64_t next_request_id_ = 0;
  std::uint64_t next_batch_id_ = 0;
  std::uint64_t next_iteration_key_ = 0;
  SimResult result_;
};

inline SimResult run_sim(const SimConfig& cfg) { return Simulator(cfg).run(); }

}  // namespace specedge::sim

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

// Synthetic speculative-serving workloads.
//
// Acceptance is driven by a hidden per-step probability. Draft-logit
// statistics are noisy monotone transforms of it, so a predictor sees a
// learnable but imperfect signal. Difficulty follows a bounded AR(1) walk
// across drafted steps of a session, which clusters rejections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"
#include "specedge/rng.hpp"
#include "specedge/spec_core.hpp"

namespace specedge::workload {

struct DraftFeatures {
  double confidence = 0.0;  // top-1 probability, [0, 1]
  double entropy = 0.0;     // nats, >= 0
  double margin = 0.0;      // top-1 minus top-2, [0, 1]
  double stddev = 0.0;      // logit dispersion, >= 0

  friend bool operator==(const DraftFeatures&, const DraftFeatures&) = default;
};

struct DraftStep {
  double latent_accept_prob = 0.0;
  DraftFeatures features;
  spec::TokenId token = 0;
};

struct DeviceProfile {
  double draft_speed = 50.0;  // tokens / s
  double network_rtt = 0.02;  // s
  int slo_class = 0;
  double alpha_base = 0.7;
  int k_max = 8;

  void validate() const {
    require(draft_speed > 0.0, "DeviceProfile: draft_speed must be positive");
    require(network_rtt >= 0.0, "DeviceProfile: network_rtt must be non-negative");
    require(alpha_base > 0.0 && alpha_base < 1.0, "DeviceProfile: alpha_base must be in (0, 1)");
    require(k_max >= 1, "DeviceProfile: k_max must be >= 1");
  }
};

struct GeneratorConfig {
  double easy_boost = 0.25;        // latent mean shift at difficulty 0 (negated at 1)
  double latent_sd = 0.22;         // spread of the per-step latent probability; 0 = none
  double feature_noise_sd = 0.08;  // observation noise on the [0, 1] scale
  double ar_phi = 0.9;             // difficulty persistence per drafted step
  double ar_sd = 0.12;
  int prompt_min = 64;
  int prompt_max = 512;
  int response_min = 32;
  int response_max = 256;
  int vocab = 16;

  void validate() const {
    require(latent_sd >= 0.0 && feature_noise_sd >= 0.0 && ar_sd >= 0.0,
            "GeneratorConfig: noise parameters must be non-negative");
    require(ar_phi >= 0.0 && ar_phi < 1.0, "GeneratorConfig: ar_phi must be in [0, 1)");
    require(prompt_min >= 1 && prompt_min <= prompt_max, "GeneratorConfig: bad prompt range");
    require(response_min >= 1 && response_min <= response_max, "GeneratorConfig: bad response range");
    require(vocab >= 2, "GeneratorConfig: vocab must be >= 2");
  }
};

// Noise-free feature transforms of the latent acceptance probability.
namespace transform {
inline double confidence(double p) { return 0.15 + 0.80 * p; }
inline double margin(double p) { return 0.05 + 0.85 * p; }
inline double entropy(double p) { return 0.05 + 2.20 * (1.0 - p); }
inline double stddev(double p) { return 0.20 + 1.50 * (1.0 - p); }
}  // namespace transform

inline double latent_mean(const DeviceProfile& profile, const GeneratorConfig& cfg, double difficulty) {
  return std::clamp(profile.alpha_base + cfg.easy_boost * (1.0 - 2.0 * difficulty), 0.0, 1.0);
}

inline DraftStep gen_draft_step(const DeviceProfile& profile, double difficulty, Rng& rng,
                                const GeneratorConfig& cfg = {}) {
  require(difficulty >= 0.0 && difficulty <= 1.0, "gen_draft_step: difficulty must be in [0, 1]");
  const double m = latent_mean(profile, cfg, difficulty);
  double p = m;
  if (cfg.latent_sd > 0.0 && m > 0.0 && m < 1.0) {
    // Beta with mean m; variance capped so both shape parameters stay > 0.
    const double var = std::min(cfg.latent_sd * cfg.latent_sd, 0.9 * m * (1.0 - m));
    const double kappa = m * (1.0 - m) / var - 1.0;
    p = rng.beta(m * kappa, (1.0 - m) * kappa);
  }
  const double s = cfg.feature_noise_sd;
  DraftStep step;
  step.latent_accept_prob = p;
  step.features.confidence = std::clamp(transform::confidence(p) + s * rng.normal(), 0.0, 1.0);
  step.features.entropy = std::max(0.0, transform::entropy(p) + 2.2 * s * rng.normal());
  step.features.margin = std::clamp(transform::margin(p) + s * rng.normal(), 0.0, 1.0);
  step.features.stddev = std::max(0.0, transform::stddev(p) + 1.5 * s * rng.normal());
  step.token = static_cast<spec::TokenId>(rng.uniform_int(0, cfg.vocab - 1));
  return step;
}

// k_max candidate steps with their realized verification outcomes. Every
// drafting policy replays the same window and differs only in how many of
// the candidates it submits.
struct DraftWindow {
  std::uint64_t id = 0;  // stable key for per-window randomness downstream
  std::vector<DraftStep> steps;
  std::vector<char> accepted;

  int size() const { return static_cast<int>(steps.size()); }

  // R in [1, size() + 1].
  int first_rejection() const {
    for (int i = 0; i < size(); ++i)
      if (!accepted[static_cast<std::size_t>(i)]) return i + 1;
    return size() + 1;
  }

  // Accepted prefix length when only the first k candidates are submitted.
  int accepted_len(int k) const { return std::min(first_rejection() - 1, k); }
};

// Lazily generates the draft windows of one speculate-verify session.
class SessionStream {
 public:
  SessionStream(const DeviceProfile& profile, const GeneratorConfig& cfg, Rng rng)
      : profile_(profile), cfg_(cfg), rng_(rng) {
    profile_.validate();
    cfg_.validate();
    Rng lengths = rng_.split("lengths");
    prompt_len_ = static_cast<int>(lengths.uniform_int(cfg_.prompt_min, cfg_.prompt_max));
    response_len_ = static_cast<int>(lengths.uniform_int(cfg_.response_min, cfg_.response_max));
    Rng d0 = rng_.split("difficulty0");
    difficulty_ = std::clamp(0.5 + cfg_.ar_sd / std::sqrt(1.0 - cfg_.ar_phi * cfg_.ar_phi) * d0.normal(),
                             0.0, 1.0);
  }

  int prompt_len() const { return prompt_len_; }
  int response_len() const { return response_len_; }
  void set_response_len(int n) {
    require(n >= 1, "SessionStream: response length must be positive");
    response_len_ = n;
  }
  int iteration() const { return iteration_; }
  const DeviceProfile& profile() const { return profile_; }

  DraftWindow next_window() {
    const auto it = static_cast<std::uint64_t>(iteration_++);
    Rng steps = rng_.split({0x57e9ULL, it});
    Rng walk = rng_.split({0xd1ffULL, it});
    Rng verify = rng_.split({0xacc7ULL, it});
    DraftWindow w;
    w.id = rng_.split({0x1dULL, it}).next_u64();
    w.steps.reserve(static_cast<std::size_t>(profile_.k_max));
    w.accepted.reserve(static_cast<std::size_t>(profile_.k_max));
    for (int i = 0; i < profile_.k_max; ++i) {
      Rng step_rng = steps.split(static_cast<std::uint64_t>(i));
      w.steps.push_back(gen_draft_step(profile_, difficulty_, step_rng, cfg_));
      w.accepted.push_back(spec::accept_draw(w.steps.back().latent_accept_prob, verify.uniform()) ? 1 : 0);
      difficulty_ = std::clamp(0.5 + cfg_.ar_phi * (difficulty_ - 0.5) + cfg_.ar_sd * walk.normal(), 0.0, 1.0);
    }
    return w;
  }

 private:
  DeviceProfile profile_;
  GeneratorConfig cfg_;
  Rng rng_;
  int prompt_len_ = 0;
  int response_len_ = 0;
  int iteration_ = 0;
  double difficulty_ = 0.5;
};

struct SessionIteration {
  DraftWindow window;
  int drafted = 0;    // K
  int accepted = 0;   // L
  int committed = 0;  // L + 1, truncated at the response length
};

struct SessionTrace {
  int prompt_len = 0;
  int response_len = 0;
  std::vector<SessionIteration> iterations;

  int committed_tokens() const {
    int n = 0;
    for (const auto& it : iterations) n += it.committed;
    return n;
  }
};

// Fixed-window (K = k_max) session run to completion.
inline SessionTrace gen_session(const DeviceProfile& profile, Rng rng, const GeneratorConfig& cfg = {},
                                int response_len_override = 0) {
  SessionStream stream(profile, cfg, rng);
  if (response_len_override > 0) stream.set_response_len(response_len_override);
  SessionTrace trace;
  trace.prompt_len = stream.prompt_len();
  trace.response_len = stream.response_len();
  int committed = 0;
  while (committed < trace.response_len) {
    SessionIteration it;
    it.window = stream.next_window();
    it.drafted = profile.k_max;
    it.accepted = it.window.accepted_len(it.drafted);
    it.committed = std::min(it.accepted + 1, trace.response_len - committed);
    committed += it.committed;
    trace.iterations.push_back(std::move(it));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Labeled predictor corpus.

struct CorpusRecord {
  std::uint64_t session_id = 0;
  int iteration = 0;
  int position = 0;  // 1-based position within the draft window
  DraftFeatures features;
  double latent_accept_prob = 0.0;
  int label = 0;  // 1 accepted, 0 first rejection
};

// Positions up to and including the first rejection of each window; the
// suffix after it never reaches the verifier and carries no label.
inline void append_window_records(std::vector<CorpusRecord>& out, std::uint64_t session_id, int iteration,
                                  const DraftWindow& w) {
  const int r = w.first_rejection();
  const int last = std::min(r, w.size());
  for (int i = 0; i < last; ++i) {
    const auto& s = w.steps[static_cast<std::size_t>(i)];
    out.push_back({session_id, iteration, i + 1, s.features, s.latent_accept_prob,
                   w.accepted[static_cast<std::size_t>(i)] ? 1 : 0});
  }
}

// Default corpus size matches the logged-trace dataset the predictor was
// designed around.
inline constexpr int kDefaultCorpusSize = 17510;

inline std::vector<CorpusRecord> gen_corpus(const DeviceProfile& profile, Rng rng, int n_records,
                                            const GeneratorConfig& cfg = {}) {
  require(n_records >= 1, "gen_corpus: need at least one record");
  std::vector<CorpusRecord> out;
  out.reserve(static_cast<std::size_t>(n_records) + static_cast<std::size_t>(profile.k_max));
  for (std::uint64_t session = 0; static_cast<int>(out.size()) < n_records; ++session) {
    SessionTrace trace = gen_session(profile, rng.split(session), cfg);
    for (std::size_t i = 0; i < trace.iterations.size() && static_cast<int>(out.size()) < n_records; ++i)
      append_window_records(out, session, static_cast<int>(i), trace.iterations[i].window);
  }
  out.resize(static_cast<std::size_t>(n_records));
  return out;
}

inline constexpr std::string_view kCorpusHeader =
    "session_id,iteration,position,confidence,entropy,margin,stddev,latent_accept_prob,label";

inline void write_corpus(std::ostream& os, const std::vector<CorpusRecord>& records) {
  os << kCorpusHeader << '\n';
  for (const auto& r : records) {
    os << r.session_id << ',' << r.iteration << ',' << r.position << ','
       << latency::format_double(r.features.confidence) << ',' << latency::format_double(r.features.entropy)
       << ',' << latency::format_double(r.features.margin) << ','
       << latency::format_double(r.features.stddev) << ',' << latency::format_double(r.latent_accept_prob)
       << ',' << r.label << '\n';
  }
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}
}  // namespace detail

inline std::vector<CorpusRecord> read_corpus(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCorpusHeader) throw DataError("corpus: missing or unexpected header");
  std::vector<CorpusRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 9) throw DataError("corpus line " + std::to_string(lineno) + ": expected 9 columns");
    const auto num = [&](std::size_t i) { return latency::parse_double(cells[i], "corpus column " + std::to_string(i)); };
    CorpusRecord r;
    r.session_id = static_cast<std::uint64_t>(num(0));
    r.iteration = static_cast<int>(num(1));
    r.position = static_cast<int>(num(2));
    r.features = {num(3), num(4), num(5), num(6)};
    r.latent_accept_prob = num(7);
    r.label = static_cast<int>(num(8));
    if (r.label != 0 && r.label != 1) throw DataError("corpus line " + std::to_string(lineno) + ": label must be 0 or 1");
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Latency profile dataset.

enum class Regime { kComputeBound, kMemoryBound, kMixed };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kComputeBound: return "compute";
    case Regime::kMemoryBound: return "memory";
    case Regime::kMixed: return "mixed";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "compute") return Regime::kComputeBound;
  if (s == "memory") return Regime::kMemoryBound;
  if (s == "mixed") return Regime::kMixed;
  throw DataError("unknown regime '" + s + "'");
}

struct ProfileSample {
  bool train = true;
  Regime regime = Regime::kMixed;
  std::vector<latency::RequestShape> requests;
  double latency_s = 0.0;

  latency::BatchFeatures features() const { return latency::batch_features(requests); }
};

namespace detail {

// Largest-remainder apportionment of n over integer weights.
inline std::vector<int> apportion(int n, const std::vector<int>& weights) {
  int total = 0;
  for (int w : weights) total += w;
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(n) * weights[i] / total;
    out[i] = static_cast<int>(std::floor(exact));
    assigned += out[i];
    rem.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& x, auto& y) { return x.first > y.first; });
  for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++out[rem[j % rem.size()].second];
  return out;
}

// `count` indices spread evenly over [0, size).
inline std::vector<std::size_t> spread(std::size_t count, std::size_t size) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < count; ++i) idx.push_back(i * size / std::max<std::size_t>(count, 1) % size);
  return idx;
}

inline std::vector<std::vector<latency::RequestShape>> compute_deterministic_grid() {
  // Cold batches: five total-token levels times five split patterns.
  std::vector<std::vector<latency::RequestShape>> grid;
  const std::vector<std::vector<double>> patterns = {
      {1.0}, {0.5, 0.5}, {0.25, 0.25, 0.25, 0.25}, {0.6, 0.4}, {0.5, 0.3, 0.2}};
  for (int total : {1200, 1400, 1600, 1800, 2000}) {
    for (const auto& pat : patterns) {
      std::vector<latency::RequestShape> batch;
      int used = 0;
      for (std::size_t i = 0; i < pat.size(); ++i) {
        const int n = (i + 1 == pat.size()) ? total - used : static_cast<int>(std::lround(total * pat[i]));
        used += n;
        batch.push_back({n, 0});
      }
      grid.push_back(std::move(batch));
    }
  }
  return grid;
}

inline std::vector<std::vector<latency::RequestShape>> memory_deterministic_grid() {
  std::vector<std::vector<latency::RequestShape>> grid;
  for (int batch : {1, 4})
    for (int l_total : {500, 1000, 1500, 2000})
      for (int l_new : {1, 5, 10, 20, 50, 100})
        grid.emplace_back(static_cast<std::size_t>(batch), latency::RequestShape{l_new, l_total - l_new});
  return grid;
}

inline std::vector<latency::RequestShape> random_compute(Rng& rng) {
  const auto n = rng.uniform_int(1, 2);
  std::vector<latency::RequestShape> b;
  for (std::int64_t i = 0; i < n; ++i) b.push_back({rng.uniform_int(1200, 2000), 0});
  return b;
}

inline std::vector<latency::RequestShape> random_memory(Rng& rng) {
  const auto n = rng.uniform_int(1, 8);
  std::vector<latency::RequestShape> b;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto l_new = rng.uniform_int(1, 100);
    const auto l_total = rng.uniform_int(500, 2000);
    b.push_back({l_new, l_total - l_new});
  }
  return b;
}

inline std::vector<latency::RequestShape> random_mixed(Rng& rng) {
  std::vector<latency::RequestShape> b;
  const auto cold = rng.uniform_int(1, 2);
  const auto warm = rng.uniform_int(1, 6);
  for (std::int64_t i = 0; i < cold; ++i) b.push_back({rng.uniform_int(100, 1000), 0});
  for (std::int64_t i = 0; i < warm; ++i) {
    const auto l_new = rng.uniform_int(1, 20);
    b.push_back({l_new, rng.uniform_int(500, 2000) - l_new});
  }
  return b;
}

}  // namespace detail

inline constexpr int kDefaultProfileConfigs = 173;
inline constexpr int kDefaultProfileTrain = 123;

// Training split follows the five-category taxonomy (25 cold deterministic,
// 48 cached deterministic grid, 15 cold random, 15 cached random, 20 mixed),
// scaled when n_configs differs from 173. The test split is drawn from the
// random categories on an independent stream.
inline std::vector<ProfileSample> gen_latency_profile_dataset(const latency::LatencyModel& model, int n_configs,
                                                              double noise_sd, Rng rng) {
  require(n_configs >= 10, "gen_latency_profile_dataset: need at least 10 configurations");
  require(noise_sd >= 0.0, "gen_latency_profile_dataset: noise must be non-negative");
  const int n_train = static_cast<int>(std::lround(static_cast<double>(n_configs) * kDefaultProfileTrain /
                                                   kDefaultProfileConfigs));
  const int n_test = n_configs - n_train;
  const auto counts = detail::apportion(n_train, {25, 48, 15, 15, 20});

  std::vector<ProfileSample> out;
  Rng noise = rng.split("noise");
  auto emit = [&](bool train, Regime regime, std::vector<latency::RequestShape> reqs) {
    ProfileSample s{train, regime, std::move(reqs), 0.0};
    s.latency_s = std::max(0.0, latency::predict_batch_time(model, s.features()) + noise_sd * noise.normal());
    out.push_back(std::move(s));
  };

  const auto compute_grid = detail::compute_deterministic_grid();
  for (auto i : detail::spread(static_cast<std::size_t>(counts[0]), compute_grid.size()))
    emit(true, Regime::kComputeBound, compute_grid[i]);
  const auto memory_grid = detail::memory_deterministic_grid();
  for (auto i : detail::spread(static_cast<std::size_t>(counts[1]), memory_grid.size()))
    emit(true, Regime::kMemoryBound, memory_grid[i]);
  Rng train_rng = rng.split("train");
  for (int i = 0; i < counts[2]; ++i) emit(true, Regime::kComputeBound, detail::random_compute(train_rng));
  for (int i = 0; i < counts[3]; ++i) emit(true, Regime::kMemoryBound, detail::random_memory(train_rng));
  for (int i = 0; i < counts[4]; ++i) emit(true, Regime::kMixed, detail::random_mixed(train_rng));

  Rng test_rng = rng.split("test");
  const auto test_counts = detail::apportion(n_test, {1, 1, 1});
  for (int i = 0; i < test_counts[0]; ++i) emit(false, Regime::kComputeBound, detail::random_compute(test_rng));
  for (int i = 0; i < test_counts[1]; ++i) emit(false, Regime::kMemoryBound, detail::random_memory(test_rng));
  for (int i = 0; i < test_counts[2]; ++i) emit(false, Regime::kMixed, detail::random_mixed(test_rng));
  return out;
}

inline constexpr std::string_view kProfileHeader = "split,regime,requests,latency_s";

// requests column: l_new:l_cached pairs joined by ';'.
inline void write_profile_dataset(std::ostream& os, const std::vector<ProfileSample>& samples) {
  os << kProfileHeader << '\n';
  for (const auto& s : samples) {
    os << (s.train ? "train" : "test") << ',' << regime_name(s.regime) << ',';
    for (std::size_t i = 0; i < s.requests.size(); ++i)
      os << (i ? ";" : "") << s.requests[i].l_new << ':' << s.requests[i].l_cached;
    os << ',' << latency::format_double(s.latency_s) << '\n';
  }
}

inline std::vector<ProfileSample> read_profile_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kProfileHeader)
    throw DataError("profile dataset: missing or unexpected header");
  std::vector<ProfileSample> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    const std::string where = "profile dataset line " + std::to_string(lineno);
    if (cells.size() != 4) throw DataError(where + ": expected 4 columns");
    ProfileSample s;
    if (cells[0] != "train" && cells[0] != "test") throw DataError(where + ": split must be train or test");
    s.train = cells[0] == "train";
    s.regime = parse_regime(cells[1]);
    for (const auto& req : detail::split_csv(cells[2], ';')) {
      const auto colon = req.find(':');
      if (colon == std::string::npos) throw DataError(where + ": malformed request '" + req + "'");
      const double l_new = latency::parse_double(std::string_view(req).substr(0, colon), where);
      const double l_cached = latency::parse_double(std::string_view(req).substr(colon + 1), where);
      if (l_new < 1 || l_cached < 0) throw DataError(where + ": invalid request lengths");
      s.requests.push_back({static_cast<std::int64_t>(l_new), static_cast<std::int64_t>(l_cached)});
    }
    if (s.requests.empty()) throw DataError(where + ": empty batch");
    s.latency_s = latency::parse_double(cells[3], where);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace specedge::workload

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

// Experiment configuration for the command-line driver.
//
// The canonical form is a nested JSON document. Layers apply in order:
// built-in defaults, SPECEDGE_* environment variables, the --config file,
// then --set overrides. Every key must already exist in the defaults, so a
// typo fails loudly with its dotted path.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"
#include "specedge/predictor.hpp"
#include "specedge/rng.hpp"
#include "specedge/scheduler.hpp"
#include "specedge/sim_engine.hpp"
#include "specedge/workload.hpp"

namespace specedge::cli {

using json = nlohmann::ordered_json;

struct WorkloadSection {
  int corpus_size = workload::kDefaultCorpusSize;
  double draft_speed = 50.0;
  double network_rtt = 0.02;
  double alpha_base = 0.7;
  int k_max = 8;
  workload::GeneratorConfig generator;

  bool operator==(const WorkloadSection& o) const {
    const auto& g = generator;
    const auto& h = o.generator;
    return corpus_size == o.corpus_size && draft_speed == o.draft_speed && network_rtt == o.network_rtt &&
           alpha_base == o.alpha_base && k_max == o.k_max && g.easy_boost == h.easy_boost &&
           g.latent_sd == h.latent_sd && g.feature_noise_sd == h.feature_noise_sd && g.ar_phi == h.ar_phi &&
           g.ar_sd == h.ar_sd && g.prompt_min == h.prompt_min && g.prompt_max == h.prompt_max &&
           g.response_min == h.response_min && g.response_max == h.response_max && g.vocab == h.vocab;
  }
};

struct PredictorSection {
  std::vector<int> hidden = {32, 16};
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 60;
  int batch_size = 64;
  int patience = 10;
  double validation_fraction = 0.2;
  double fpr_target = 0.45;
  double test_fraction = 0.2;  // held out by session for the train report
  std::string model_path;      // load instead of training when set
  std::string corpus_path;     // read instead of generating when set
  bool operator==(const PredictorSection&) const = default;
};

struct FitSection {
  std::string data_path;
  int configs = 173;
  double noise_ms = 4.0;
  int n_boot = 1000;
  int cv_folds = 5;
  double max_condition = 1e6;
  bool operator==(const FitSection&) const = default;
};

struct LatencySection {
  std::string preset = "appendix-c";
  std::string model_path;  // overrides the preset when set
  FitSection fit;
  bool operator==(const LatencySection&) const = default;
};

struct SchedulerSection {
  double guard_delta = 0.01;
  double memory_budget = 4096.0;
  int max_batch_size = 64;
  std::string dispatch = "event";
  double period = 0.01;
  double min_dwell = 0.002;
  std::string expired = "late_first";
  std::optional<double> starvation_age;
  int page_size = 16;
  bool operator==(const SchedulerSection&) const = default;
};

struct SimSection {
  std::string system = "wisp";
  int n_devices = 8;
  std::vector<double> slo_speeds = {2.0, 4.0, 6.0, 8.0};
  std::vector<double> class_weights = {1.0, 1.0, 1.0, 1.0};
  double draft_speed_min = 50.0;
  double draft_speed_max = 50.0;
  double rtt_min = 0.01;
  double rtt_max = 0.04;
  double rtt_jitter = 0.0;
  double alpha_min = 0.7;
  double alpha_max = 0.7;
  int k_max = 8;
  std::string draft = "predictor";
  double noise_sigma = 0.05;
  double spike_prob = 0.0;
  double spike_factor = 4.0;
  double duration = 60.0;
  double warmup_fraction = 0.1;
  int sessions_per_device = 0;
  double alpha_ema = 0.2;
  bool prefix_cache = true;
  int attribution_window = 20;
  double attribution_rho = 1.5;
  std::string attribution_mode = "events";
  bool operator==(const SimSection&) const = default;
};

// Applied on top of `sim` when the system under test is the FCFS baseline.
struct BaselineSection {
  std::string draft = "fixed";
  bool prefix_cache = false;
  bool operator==(const BaselineSection&) const = default;
};

struct CapacitySection {
  std::vector<int> sweep = {4, 8, 16, 24, 32, 48, 64, 96, 128};
  double epsilon = 0.15;
  bool refine = false;
  std::vector<std::string> systems = {"wisp", "fcfs"};
  bool operator==(const CapacitySection&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  WorkloadSection workload;
  PredictorSection predictor;
  LatencySection latency;
  SchedulerSection scheduler;
  SimSection sim;
  BaselineSection baseline;
  CapacitySection capacity;
  bool operator==(const ExperimentConfig&) const = default;
};

// Visits every leaf as (dotted path, reference). Both serialization
// directions go through this one list.
template <class F>
void for_each_field(ExperimentConfig& c, F&& f) {
  f("seed", c.seed);
  f("out", c.out);
  auto& w = c.workload;
  f("workload.corpus_size", w.corpus_size);
  f("workload.draft_speed", w.draft_speed);
  f("workload.network_rtt", w.network_rtt);
  f("workload.alpha_base", w.alpha_base);
  f("workload.k_max", w.k_max);
  f("workload.generator.easy_boost", w.generator.easy_boost);
  f("workload.generator.latent_sd", w.generator.latent_sd);
  f("workload.generator.feature_noise_sd", w.generator.feature_noise_sd);
  f("workload.generator.ar_phi", w.generator.ar_phi);
  f("workload.generator.ar_sd", w.generator.ar_sd);
  f("workload.generator.prompt_min", w.generator.prompt_min);
  f("workload.generator.prompt_max", w.generator.prompt_max);
  f("workload.generator.response_min", w.generator.response_min);
  f("workload.generator.response_max", w.generator.response_max);
  f("workload.generator.vocab", w.generator.vocab);
  auto& p = c.predictor;
  f("predictor.hidden", p.hidden);
  f("predictor.learning_rate", p.learning_rate);
  f("predictor.momentum", p.momentum);
  f("predictor.epochs", p.epochs);
  f("predictor.batch_size", p.batch_size);
  f("predictor.patience", p.patience);
  f("predictor.validation_fraction", p.validation_fraction);
  f("predictor.fpr_target", p.fpr_target);
  f("predictor.test_fraction", p.test_fraction);
  f("predictor.model_path", p.model_path);
  f("predictor.corpus_path", p.corpus_path);
  auto& l = c.latency;
  f("latency.preset", l.preset);
  f("latency.model_path", l.model_path);
  f("latency.fit.data_path", l.fit.data_path);
  f("latency.fit.configs", l.fit.configs);
  f("latency.fit.noise_ms", l.fit.noise_ms);
  f("latency.fit.n_boot", l.fit.n_boot);
  f("latency.fit.cv_folds", l.fit.cv_folds);
  f("latency.fit.max_condition", l.fit.max_condition);
  auto& s = c.scheduler;
  f("scheduler.guard_delta", s.guard_delta);
  f("scheduler.memory_budget", s.memory_budget);
  f("scheduler.max_batch_size", s.max_batch_size);
  f("scheduler.dispatch", s.dispatch);
  f("scheduler.period", s.period);
  f("scheduler.min_dwell", s.min_dwell);
  f("scheduler.expired", s.expired);
  f("scheduler.starvation_age", s.starvation_age);
  f("scheduler.page_size", s.page_size);
  auto& m = c.sim;
  f("sim.system", m.system);
  f("sim.n_devices", m.n_devices);
  f("sim.slo_speeds", m.slo_speeds);
  f("sim.class_weights", m.class_weights);
  f("sim.draft_speed_min", m.draft_speed_min);
  f("sim.draft_speed_max", m.draft_speed_max);
  f("sim.rtt_min", m.rtt_min);
  f("sim.rtt_max", m.rtt_max);
  f("sim.rtt_jitter", m.rtt_jitter);
  f("sim.alpha_min", m.alpha_min);
  f("sim.alpha_max", m.alpha_max);
  f("sim.k_max", m.k_max);
  f("sim.draft", m.draft);
  f("sim.noise_sigma", m.noise_sigma);
  f("sim.spike_prob", m.spike_prob);
  f("sim.spike_factor", m.spike_factor);
  f("sim.duration", m.duration);
  f("sim.warmup_fraction", m.warmup_fraction);
  f("sim.sessions_per_device", m.sessions_per_device);
  f("sim.alpha_ema", m.alpha_ema);
  f("sim.prefix_cache", m.prefix_cache);
  f("sim.attribution_window", m.attribution_window);
  f("sim.attribution_rho", m.attribution_rho);
  f("sim.attribution_mode", m.attribution_mode);
  f("baseline.draft", c.baseline.draft);
  f("baseline.prefix_cache", c.baseline.prefix_cache);
  f("capacity.sweep", c.capacity.sweep);
  f("capacity.epsilon", c.capacity.epsilon);
  f("capacity.refine", c.capacity.refine);
  f("capacity.systems", c.capacity.systems);
}

namespace detail {

inline json::json_pointer pointer(const std::string& dotted) {
  std::string p = "/" + dotted;
  for (auto& ch : p)
    if (ch == '.') ch = '/';
  return json::json_pointer(p);
}

[[noreturn]] inline void type_error(const std::string& path, const char* expected) {
  throw ConfigError(path, std::string("expected ") + expected);
}

inline void read(const json& j, const std::string& path, double& v) {
  if (!j.is_number()) type_error(path, "a number");
  v = j.get<double>();
}

inline void read(const json& j, const std::string& path, int& v) {
  if (!j.is_number_integer()) type_error(path, "an integer");
  const auto x = j.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) throw ConfigError(path, "integer out of range");
  v = static_cast<int>(x);
}

inline void read(const json& j, const std::string& path, std::uint64_t& v) {
  if (!j.is_number_unsigned()) type_error(path, "a non-negative integer");
  v = j.get<std::uint64_t>();
}

inline void read(const json& j, const std::string& path, bool& v) {
  if (!j.is_boolean()) type_error(path, "true or false");
  v = j.get<bool>();
}

inline void read(const json& j, const std::string& path, std::string& v) {
  if (!j.is_string()) type_error(path, "a string");
  v = j.get<std::string>();
}

inline void read(const json& j, const std::string& path, std::optional<double>& v) {
  if (j.is_null()) {
    v.reset();
    return;
  }
  if (!j.is_number()) type_error(path, "a number or null");
  v = j.get<double>();
}

template <class T>
void read(const json& j, const std::string& path, std::vector<T>& v) {
  if (!j.is_array()) type_error(path, "an array");
  v.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    T x{};
    read(j[i], path + "[" + std::to_string(i) + "]", x);
    v.push_back(std::move(x));
  }
}

template <class T>
json write(const T& v) {
  return json(v);
}

inline json write(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Merges `patch` into `base`; every key of `patch` must exist in `shape`.
inline void merge_checked(json& base, const json& patch, const json& shape, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError(prefix.empty() ? "config" : prefix, "expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!shape.contains(key)) throw ConfigError(path, "unknown key");
    if (shape[key].is_object())
      merge_checked(base[key], value, shape[key], path);
    else
      base[key] = value;
  }
}

// Override values are JSON when they parse as JSON, plain strings otherwise.
inline json parse_value(const std::string& text) {
  auto v = json::parse(text, nullptr, false);
  return v.is_discarded() ? json(text) : v;
}

inline void set_dotted(json& doc, const json& shape, const std::string& dotted, const json& value) {
  if (dotted.empty()) throw ConfigError("config", "empty override key");
  json patch = value;
  std::string rest = dotted;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest.erase(0, pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_checked(doc, patch, shape, "");
}

}  // namespace detail

inline json to_json(ExperimentConfig c) {
  json j = json::object();
  for_each_field(c, [&](const std::string& path, const auto& v) { j[detail::pointer(path)] = detail::write(v); });
  return j;
}

inline ExperimentConfig from_json(const json& j) {
  const json shape = to_json(ExperimentConfig{});
  json doc = shape;
  detail::merge_checked(doc, j, shape, "");
  ExperimentConfig c;
  for_each_field(c, [&](const std::string& path, auto& v) { detail::read(doc.at(detail::pointer(path)), path, v); });
  return c;
}

// ---------------------------------------------------------------------------
// Layering.

struct ConfigSources {
  std::map<std::string, std::string> env;  // full environment; non-SPECEDGE_ entries are ignored
  std::string file;                        // empty: none
  std::vector<std::string> overrides;      // "dotted.key=value"
};

inline constexpr std::string_view kEnvPrefix = "SPECEDGE_";

// SPECEDGE_SIM__N_DEVICES -> sim.n_devices
inline std::string env_key_to_path(std::string_view name) {
  std::string s(name.substr(kEnvPrefix.size()));
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '_' && i + 1 < s.size() && s[i + 1] == '_') {
      out += '.';
      ++i;
    } else {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
    }
  }
  return out;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  auto j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config", "'" + path + "' is not valid JSON");
  return j;
}

inline json layered_document(const ConfigSources& src) {
  const json shape = to_json(ExperimentConfig{});
  json doc = shape;
  for (const auto& [name, value] : src.env) {
    if (name.rfind(kEnvPrefix, 0) != 0) continue;
    const std::string path = env_key_to_path(name);
    try {
      detail::set_dotted(doc, shape, path, detail::parse_value(value));
    } catch (const ConfigError& e) {
      throw ConfigError(e.field(), std::string("from environment variable ") + name + ": " +
                                       std::string(e.what()).substr(e.field().size() + 2));
    }
  }
  if (!src.file.empty()) detail::merge_checked(doc, read_json_file(src.file), shape, "");
  for (const auto& o : src.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, "override must look like key=value");
    detail::set_dotted(doc, shape, o.substr(0, eq), detail::parse_value(o.substr(eq + 1)));
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Translation into library configs. Everything here throws ConfigError with
// the dotted path of the offending key.

inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
  return Rng(seed).split(name).next_u64();
}

inline latency::LatencyModel preset_model(const std::string& name, const std::string& field) {
  const auto m = latency::presets::by_name(name);
  if (!m) throw ConfigError(field, "unknown preset '" + name + "' (appendix-c, a100-qwen32b, a100-qwen32b-n566, instant)");
  return *m;
}

inline latency::LatencyModel resolve_latency_model(const ExperimentConfig& c) {
  if (c.latency.model_path.empty()) return preset_model(c.latency.preset, "latency.preset");
  std::ifstream in(c.latency.model_path);
  if (!in) throw IoError("cannot open latency model '" + c.latency.model_path + "'");
  return latency::read_model_file(in).model;
}

inline sim::DraftMode parse_draft(const std::string& s, const std::string& field) {
  if (s == "predictor") return sim::DraftMode::kPredictor;
  if (s == "fixed") return sim::DraftMode::kFixed;
  if (s == "oracle") return sim::DraftMode::kOracle;
  throw ConfigError(field, "unknown draft mode '" + s + "' (predictor, fixed, oracle)");
}

inline void check_system(const std::string& s, const std::string& field) {
  if (s != "wisp" && s != "fcfs") throw ConfigError(field, "unknown system '" + s + "' (wisp, fcfs)");
}

inline sched::SchedulerConfig scheduler_config(const SchedulerSection& s) {
  sched::SchedulerConfig out;
  out.guard_delta = s.guard_delta;
  out.memory_budget = s.memory_budget;
  out.max_batch_size = s.max_batch_size;
  if (s.dispatch == "event")
    out.dispatch = sched::DispatchMode::kEventDriven;
  else if (s.dispatch == "periodic")
    out.dispatch = sched::DispatchMode::kPeriodic;
  else
    throw ConfigError("scheduler.dispatch", "unknown dispatch mode '" + s.dispatch + "' (event, periodic)");
  out.period = s.period;
  out.min_dwell = s.min_dwell;
  const auto e = sched::parse_expired_policy(s.expired);
  if (!e) throw ConfigError("scheduler.expired", "unknown policy '" + s.expired + "' (literal, drop, late_first, best_effort)");
  out.expired = *e;
  out.starvation_age = s.starvation_age;
  out.page_size = s.page_size;
  try {
    out.validate();
  } catch (const ContractError& err) {
    throw ConfigError("scheduler", err.what());
  }
  return out;
}

inline workload::DeviceProfile corpus_profile(const WorkloadSection& w) {
  return {w.draft_speed, w.network_rtt, 0, w.alpha_base, w.k_max};
}

// Simulation config for `system`; the model and predictor are attached by
// the caller.
inline sim::SimConfig sim_config(const ExperimentConfig& c, const std::string& system) {
  check_system(system, "sim.system");
  const auto& m = c.sim;
  sim::SimConfig s;
  s.n_devices = m.n_devices;
  s.slo_speeds = m.slo_speeds;
  s.class_weights = m.class_weights;
  s.draft_speed_min = m.draft_speed_min;
  s.draft_speed_max = m.draft_speed_max;
  s.rtt_min = m.rtt_min;
  s.rtt_max = m.rtt_max;
  s.rtt_jitter = m.rtt_jitter;
  s.alpha_min = m.alpha_min;
  s.alpha_max = m.alpha_max;
  s.k_max = m.k_max;
  s.generator = c.workload.generator;
  s.sched = scheduler_config(c.scheduler);
  s.noise_sigma = m.noise_sigma;
  s.spike_prob = m.spike_prob;
  s.spike_factor = m.spike_factor;
  s.duration = m.duration;
  s.warmup_fraction = m.warmup_fraction;
  s.sessions_per_device = m.sessions_per_device;
  s.alpha_ema = m.alpha_ema;
  s.attribution_window = m.attribution_window;
  s.attribution_rho = m.attribution_rho;
  if (m.attribution_mode == "events")
    s.attribution_mode = sim::MovingAverageMode::kEvents;
  else if (m.attribution_mode == "batches")
    s.attribution_mode = sim::MovingAverageMode::kBatches;
  else
    throw ConfigError("sim.attribution_mode", "unknown mode '" + m.attribution_mode + "' (events, batches)");
  if (system == "wisp") {
    s.scheduler = sim::SchedulerKind::kWisp;
    s.draft = parse_draft(m.draft, "sim.draft");
    s.prefix_cache = m.prefix_cache;
  } else {
    s.scheduler = sim::SchedulerKind::kFcfs;
    s.draft = parse_draft(c.baseline.draft, "baseline.draft");
    s.prefix_cache = c.baseline.prefix_cache;
  }
  s.seed = substream_seed(c.seed, "sim");
  return s;
}

inline controller::TrainConfig train_config(const ExperimentConfig& c) {
  const auto& p = c.predictor;
  controller::TrainConfig t;
  t.hidden = p.hidden;
  t.learning_rate = p.learning_rate;
  t.momentum = p.momentum;
  t.epochs = p.epochs;
  t.batch_size = p.batch_size;
  t.patience = p.patience;
  t.validation_fraction = p.validation_fraction;
  t.fpr_target = p.fpr_target;
  t.seed = substream_seed(c.seed, "predictor-init");
  return t;
}

inline void validate(const ExperimentConfig& c) {
  const auto& w = c.workload;
  if (w.corpus_size < 1) throw ConfigError("workload.corpus_size", "must be at least 1");
  try {
    corpus_profile(w).validate();
  } catch (const ContractError& e) {
    throw ConfigError("workload", e.what());
  }
  const auto& p = c.predictor;
  for (int h : p.hidden)
    if (h < 1) throw ConfigError("predictor.hidden", "widths must be positive");
  if (!(p.learning_rate > 0.0)) throw ConfigError("predictor.learning_rate", "must be positive");
  if (!(p.momentum >= 0.0 && p.momentum < 1.0)) throw ConfigError("predictor.momentum", "must be in [0, 1)");
  if (p.epochs < 1) throw ConfigError("predictor.epochs", "must be at least 1");
  if (p.batch_size < 1) throw ConfigError("predictor.batch_size", "must be at least 1");
  if (p.patience < 1) throw ConfigError("predictor.patience", "must be at least 1");
  if (!(p.validation_fraction > 0.0 && p.validation_fraction < 1.0))
    throw ConfigError("predictor.validation_fraction", "must be in (0, 1)");
  if (!(p.fpr_target > 0.0 && p.fpr_target < 1.0)) throw ConfigError("predictor.fpr_target", "must be in (0, 1)");
  if (!(p.test_fraction > 0.0 && p.test_fraction < 1.0)) throw ConfigError("predictor.test_fraction", "must be in (0, 1)");
  const auto& l = c.latency;
  if (l.model_path.empty()) preset_model(l.preset, "latency.preset");
  if (l.fit.configs < 10) throw ConfigError("latency.fit.configs", "must be at least 10");
  if (!(l.fit.noise_ms >= 0.0)) throw ConfigError("latency.fit.noise_ms", "must be non-negative");
  if (l.fit.n_boot != 0 && l.fit.n_boot < 100) throw ConfigError("latency.fit.n_boot", "must be 0 or at least 100");
  if (l.fit.cv_folds < 0) throw ConfigError("latency.fit.cv_folds", "must be non-negative");
  if (!(l.fit.max_condition > 1.0)) throw ConfigError("latency.fit.max_condition", "must exceed 1");
  check_system(c.sim.system, "sim.system");
  parse_draft(c.baseline.draft, "baseline.draft");
  auto s = sim_config(c, c.sim.system);
  if (s.draft == sim::DraftMode::kPredictor) s.predictor = controller::PredictorModel{};
  try {
    s.validate();
  } catch (const ConfigError& e) {
    const std::string msg = std::string(e.what()).substr(e.field().size() + 2);
    throw ConfigError(e.field() == "scheduler" ? "scheduler" : "sim." + e.field(), msg);
  }
  const auto& cap = c.capacity;
  if (cap.sweep.empty()) throw ConfigError("capacity.sweep", "must not be empty");
  for (int n : cap.sweep)
    if (n < 1) throw ConfigError("capacity.sweep", "device counts must be positive");
  if (!(cap.epsilon > 0.0 && cap.epsilon <= 1.0)) throw ConfigError("capacity.epsilon", "must be in (0, 1]");
  if (cap.systems.empty()) throw ConfigError("capacity.systems", "must not be empty");
  for (const auto& sys : cap.systems) check_system(sys, "capacity.systems");
}

// Defaults < environment < file < overrides, then validated.
inline ExperimentConfig load_config(const ConfigSources& src) {
  const auto c = from_json(layered_document(src));
  validate(c);
  return c;
}

}  // namespace specedge::cli

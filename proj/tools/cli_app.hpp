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

// Command-line driver. `run` is the whole program minus process plumbing, so
// tests can call it in-process with a fake environment.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
// 4 data or numeric error, 1 anything unexpected.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "experiment_config.hpp"
#include "json.hpp"
#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"
#include "specedge/metrics.hpp"
#include "specedge/ols_fit.hpp"
#include "specedge/predictor.hpp"
#include "specedge/sim_engine.hpp"
#include "specedge/workload.hpp"

namespace specedge::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kIo = 3, kData = 4 };

namespace detail {

class OutDir {
 public:
  explicit OutDir(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_))
      throw IoError("cannot create output directory '" + dir_.string() + "'");
  }

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  template <class Fn>
  void write(const std::string& name, Fn&& fn) const {
    const auto p = path(name);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
    fn(os);
    os.close();
    if (!os) throw IoError("write to '" + p.string() + "' failed");
  }

  void write_json(const std::string& name, const json& j) const {
    write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }

 private:
  std::filesystem::path dir_;
};

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <class T>
T read_file(const std::string& path, T (*reader)(std::istream&), const char* what) {
  std::ifstream in(path);
  if (!in) throw IoError(std::string("cannot open ") + what + " '" + path + "'");
  return reader(in);
}

inline std::vector<workload::CorpusRecord> obtain_corpus(const ExperimentConfig& c) {
  if (!c.predictor.corpus_path.empty()) return read_file(c.predictor.corpus_path, &workload::read_corpus, "corpus");
  return workload::gen_corpus(corpus_profile(c.workload), Rng(c.seed).split("workload").split("corpus"),
                              c.workload.corpus_size, c.workload.generator);
}

inline void require_both_classes(std::span<const workload::CorpusRecord> corpus) {
  std::size_t pos = 0;
  for (const auto& r : corpus) pos += r.label == 1;
  if (corpus.empty() || pos == 0 || pos == corpus.size())
    throw DataError("corpus must contain both accepted and rejected records");
}

struct TrainedPredictor {
  controller::PredictorModel model;
  controller::ClassifierReport report;  // on the held-out sessions
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

inline TrainedPredictor train_on_corpus(const ExperimentConfig& c, std::span<const workload::CorpusRecord> corpus) {
  require_both_classes(corpus);
  auto split = controller::split_by_session(corpus, c.predictor.test_fraction, substream_seed(c.seed, "predictor-split"));
  if (split.train.empty() || split.test.empty()) throw DataError("corpus has too few sessions for a held-out split");
  TrainedPredictor t;
  t.model = controller::train_predictor(split.train, train_config(c));
  t.report = controller::evaluate_predictor(t.model, split.test);
  t.n_train = split.train.size();
  t.n_test = split.test.size();
  return t;
}

inline controller::PredictorModel obtain_predictor(const ExperimentConfig& c) {
  if (!c.predictor.model_path.empty())
    return read_file(c.predictor.model_path, &controller::read_predictor, "predictor model");
  return train_on_corpus(c, obtain_corpus(c)).model;
}

inline json report_json(const controller::ClassifierReport& r) {
  return json{{"Acc", r.accuracy}, {"AUC", r.auc},      {"Rec1", r.recall_accepted},
              {"Spec", r.specificity}, {"FPR", r.fpr}, {"BalAcc", r.balanced_accuracy},
              {"confusion", {{"tn", r.tn}, {"fp", r.fp}, {"fn", r.fn}, {"tp", r.tp}}}};
}

inline json split_json(const latency::SplitMetrics& m) {
  return json{{"n", m.n},           {"r2", m.r2},       {"adjusted_r2", m.adjusted_r2},
              {"rmse_s", m.rmse_s}, {"mae_s", m.mae_s}, {"mape_pct", m.mape_pct},
              {"mape_excluded", m.mape_excluded},       {"max_error_s", m.max_error_s}};
}

inline json coefficients_json(const latency::LatencyModel& m) {
  json j = json::object();
  const auto x = m.coefficients();
  for (std::size_t i = 0; i < x.size(); ++i) j[latency::kCoefficientNames[i]] = x[i];
  return j;
}

inline json metrics_json(const sim::SimMetrics& m) {
  json classes = json::array();
  for (std::size_t i = 0; i < m.classes.size(); ++i) {
    const auto& c = m.classes[i];
    classes.push_back({{"class", i},
                       {"slo_speed", c.slo_speed},
                       {"iterations", c.iterations},
                       {"violations", c.violations},
                       {"violation_rate", c.violation_rate},
                       {"compute_dominant", c.compute_dominant},
                       {"queue_dominant", c.queue_dominant}});
  }
  return json{{"iterations", m.iterations},
              {"violation_rate", m.violation_rate},
              {"goodput_tokens_per_s", m.goodput},
              {"committed_fraction", m.committed_fraction},
              {"mean_wasted_tokens", m.mean_wasted},
              {"mean_wdt_s", m.mean_wdt_s},
              {"batches", m.batches},
              {"mean_batch_size", m.mean_batch_size},
              {"mean_predicted_batch_s", m.mean_predicted_batch_s},
              {"mean_actual_batch_s", m.mean_actual_batch_s},
              {"measured_span_s", m.measured_span_s},
              {"classes", classes}};
}

// "4,8,16" or "4:64:4" (inclusive).
inline std::vector<int> parse_sweep(const std::string& s) {
  std::vector<int> out;
  auto to_int = [&](const std::string& t) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != t.size()) throw ConfigError("capacity.sweep", "cannot parse '" + s + "'");
    return v;
  };
  if (s.find(':') != std::string::npos) {
    const auto parts = workload::detail::split_csv(s, ':');
    if (parts.size() != 3) throw ConfigError("capacity.sweep", "range must be lo:hi:step");
    const int lo = to_int(parts[0]), hi = to_int(parts[1]), step = to_int(parts[2]);
    if (step < 1 || lo < 1 || hi < lo) throw ConfigError("capacity.sweep", "need 1 <= lo <= hi and step >= 1");
    for (int n = lo; n <= hi; n += step) out.push_back(n);
  } else {
    for (const auto& t : workload::detail::split_csv(s, ',')) out.push_back(to_int(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Each receives a fully validated config.

struct Context {
  ExperimentConfig cfg;
  bool timestamps = true;
  std::ostream* out = nullptr;
};

inline std::optional<controller::PredictorModel> predictor_if_needed(const ExperimentConfig& c,
                                                                     const std::vector<std::string>& systems) {
  for (const auto& sys : systems)
    if (sim_config(c, sys).draft == sim::DraftMode::kPredictor) return obtain_predictor(c);
  return std::nullopt;
}

inline int cmd_simulate(const Context& ctx) {
  const auto& c = ctx.cfg;
  const OutDir dir(c.out);
  dir.write_json("config.json", to_json(c));
  auto s = sim_config(c, c.sim.system);
  s.model = resolve_latency_model(c);
  s.predictor = predictor_if_needed(c, {c.sim.system});
  const auto res = sim::run_sim(s);
  const std::string run_id = c.sim.system + "-n" + std::to_string(c.sim.n_devices) + "-s" + std::to_string(c.seed);
  std::string meta = "specedge simulate run_id=" + run_id;
  if (ctx.timestamps) meta += " created=" + utc_timestamp();
  dir.write("trace.csv", [&](std::ostream& os) { sim::write_trace(os, run_id, res.records, meta); });
  json summary = {{"run_id", run_id},          {"system", c.sim.system}, {"n_devices", c.sim.n_devices},
                  {"seed", c.seed},            {"warmup_end_s", res.warmup_end},
                  {"end_time_s", res.end_time}, {"metrics", metrics_json(res.metrics)}};
  dir.write_json("summary.json", summary);
  *ctx.out << "simulate: " << res.records.size() << " iterations, violation rate "
           << latency::format_double(res.metrics.violation_rate) << ", goodput "
           << latency::format_double(res.metrics.goodput) << " tok/s -> " << dir.path("trace.csv").string() << '\n';
  return kOk;
}

inline int cmd_capacity(const Context& ctx, std::optional<int> only_class) {
  const auto& c = ctx.cfg;
  const auto n_classes = static_cast<int>(c.sim.slo_speeds.size());
  if (only_class && (*only_class < 0 || *only_class >= n_classes))
    throw ConfigError("class", "must be in [0, " + std::to_string(n_classes - 1) + "]");
  const OutDir dir(c.out);
  dir.write_json("config.json", to_json(c));
  const auto model = resolve_latency_model(c);
  const auto predictor = predictor_if_needed(c, c.capacity.systems);

  std::ostringstream table, sweep;
  table << "system,class,slo_speed,capacity,violation_at_capacity\n";
  sweep << "system,n_devices,class,iterations,violation_rate\n";
  for (const auto& system : c.capacity.systems) {
    std::map<int, sim::SimMetrics> runs;
    auto metrics_at = [&](int n) -> const sim::SimMetrics& {
      auto it = runs.find(n);
      if (it == runs.end()) {
        auto s = sim_config(c, system);
        s.n_devices = n;
        s.model = model;
        if (s.draft == sim::DraftMode::kPredictor) s.predictor = predictor;
        it = runs.emplace(n, sim::run_sim(s).metrics).first;
      }
      return it->second;
    };
    for (int k = 0; k < n_classes; ++k) {
      if (only_class && k != *only_class) continue;
      // A class with no devices at some N has no violations to observe.
      auto rate = [&](int n) {
        const auto& cm = metrics_at(n).classes[static_cast<std::size_t>(k)];
        return cm.iterations > 0 ? cm.violation_rate : 0.0;
      };
      const auto r = sim::capacity(c.capacity.sweep, rate, c.capacity.epsilon, c.capacity.refine);
      table << system << ',' << k << ',' << latency::format_double(c.sim.slo_speeds[static_cast<std::size_t>(k)]) << ','
            << r.capacity << ',' << latency::format_double(r.violation_at_capacity) << '\n';
      *ctx.out << "capacity: " << system << " class " << k << " -> " << r.capacity << '\n';
    }
    for (const auto& [n, m] : runs)
      for (int k = 0; k < n_classes; ++k) {
        const auto& cm = m.classes[static_cast<std::size_t>(k)];
        sweep << system << ',' << n << ',' << k << ',' << cm.iterations << ','
              << latency::format_double(cm.violation_rate) << '\n';
      }
  }
  dir.write("capacity.csv", [&](std::ostream& os) { os << table.str(); });
  dir.write("capacity_sweep.csv", [&](std::ostream& os) { os << sweep.str(); });
  return kOk;
}

enum class FitSource { kData, kSynthetic, kPreset };

inline int cmd_fit_estimator(const Context& ctx, FitSource source) {
  const auto& c = ctx.cfg;
  const OutDir dir(c.out);
  dir.write_json("config.json", to_json(c));
  latency::ModelFile mf;
  json report;
  if (source == FitSource::kPreset) {
    mf.model = resolve_latency_model(c);
    mf.metadata["source"] = c.latency.model_path.empty() ? "preset:" + c.latency.preset : "file";
    report = {{"source", mf.metadata["source"]}, {"coefficients", coefficients_json(mf.model)}};
  } else {
    std::vector<workload::ProfileSample> samples;
    if (source == FitSource::kData) {
      samples = read_file(c.latency.fit.data_path, &workload::read_profile_dataset, "profile dataset");
      mf.metadata["source"] = "data";
    } else {
      samples = workload::gen_latency_profile_dataset(resolve_latency_model(c), c.latency.fit.configs,
                                                      c.latency.fit.noise_ms / 1000.0,
                                                      Rng(c.seed).split("workload").split("profile"));
      dir.write("profile.csv", [&](std::ostream& os) { workload::write_profile_dataset(os, samples); });
      mf.metadata["source"] = "synthetic";
    }
    latency::FitOptions opts;
    opts.cv_folds = c.latency.fit.cv_folds;
    opts.n_boot = c.latency.fit.n_boot;
    opts.seed = substream_seed(c.seed, "bootstrap");
    opts.max_condition = c.latency.fit.max_condition;
    const auto fit = latency::fit_ols(samples, opts);
    if (!fit.model.all_finite()) throw DataError("fit produced non-finite coefficients");
    mf.model = fit.model;
    const auto& rep = fit.report;
    report = {{"source", mf.metadata["source"]},
              {"coefficients", coefficients_json(fit.model)},
              {"train", split_json(rep.train)},
              {"test", split_json(rep.test)},
              {"cv", {{"folds_used", rep.cv_folds_used}, {"r2_mean", rep.cv_r2_mean}, {"r2_sd", rep.cv_r2_sd}}},
              {"condition_number", rep.condition_number},
              {"used_qr", rep.used_qr}};
    if (rep.bootstrap) {
      json ci = json::object();
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& iv = rep.bootstrap->intervals[i];
        mf.intervals[latency::kCoefficientNames[i]] = iv;
        ci[latency::kCoefficientNames[i]] = {{"lo", iv.lo}, {"hi", iv.hi}, {"se", rep.bootstrap->standard_errors[i]}};
      }
      report["bootstrap"] = {{"iterations", rep.bootstrap->iterations}, {"redraws", rep.bootstrap->redraws}, {"ci95", ci}};
    }
    json regimes = json::object();
    for (const auto& [regime, r] : latency::regime_diagnostics(samples, fit.model).regimes) {
      json dom = json::object();
      for (const auto& [comp, n] : r.dominant) dom[latency::component_name(comp)] = n;
      regimes[workload::regime_name(regime)] = {
          {"n", r.n}, {"mean_abs_error_s", r.mean_abs_error_s}, {"p95_abs_error_s", r.p95_abs_error_s}, {"dominant", dom}};
    }
    report["regimes"] = regimes;
    mf.metadata["n_train"] = std::to_string(rep.train.n);
    mf.metadata["n_test"] = std::to_string(rep.test.n);
    *ctx.out << "fit-estimator: test R2 " << latency::format_double(rep.test.r2) << ", MAPE "
             << latency::format_double(rep.test.mape_pct) << "%\n";
  }
  dir.write("latency_model.txt", [&](std::ostream& os) { latency::write_model_file(os, mf); });
  dir.write_json("fit_report.json", report);
  return kOk;
}

inline int cmd_predictor_train(const Context& ctx) {
  const auto& c = ctx.cfg;
  const OutDir dir(c.out);
  dir.write_json("config.json", to_json(c));
  const auto t = train_on_corpus(c, obtain_corpus(c));
  dir.write("predictor.txt", [&](std::ostream& os) { controller::write_predictor(os, t.model); });
  json report = report_json(t.report);
  report["split"] = {{"evaluated_on", "held-out sessions"}, {"n_train", t.n_train}, {"n_test", t.n_test}};
  report["threshold"] = t.model.threshold;
  dir.write_json("predictor_report.json", report);
  *ctx.out << "predictor train: FPR " << latency::format_double(t.report.fpr) << ", BalAcc "
           << latency::format_double(t.report.balanced_accuracy) << '\n';
  return kOk;
}

inline int cmd_predictor_eval(const Context& ctx) {
  const auto& c = ctx.cfg;
  if (c.predictor.model_path.empty()) throw ConfigError("predictor.model_path", "eval needs a model (--model)");
  const OutDir dir(c.out);
  dir.write_json("config.json", to_json(c));
  const auto model = read_file(c.predictor.model_path, &controller::read_predictor, "predictor model");
  const auto corpus = obtain_corpus(c);
  require_both_classes(corpus);
  const auto r = controller::evaluate_predictor(model, corpus);
  json report = report_json(r);
  report["n"] = corpus.size();
  dir.write_json("predictor_report.json", report);
  *ctx.out << "predictor eval: FPR " << latency::format_double(r.fpr) << ", BalAcc "
           << latency::format_double(r.balanced_accuracy) << '\n';
  return kOk;
}

inline int cmd_gen_workload(const Context& ctx, const std::string& kind) {
  const auto& c = ctx.cfg;
  if (kind != "corpus" && kind != "profile") throw ConfigError("kind", "must be corpus or profile");
  const OutDir dir(c.out);
  dir.write_json("config.json", to_json(c));
  if (kind == "corpus") {
    const auto corpus = obtain_corpus(c);
    dir.write("corpus.csv", [&](std::ostream& os) { workload::write_corpus(os, corpus); });
    *ctx.out << "gen-workload: " << corpus.size() << " corpus records\n";
  } else {
    const auto samples = workload::gen_latency_profile_dataset(resolve_latency_model(c), c.latency.fit.configs,
                                                               c.latency.fit.noise_ms / 1000.0,
                                                               Rng(c.seed).split("workload").split("profile"));
    dir.write("profile.csv", [&](std::ostream& os) { workload::write_profile_dataset(os, samples); });
    *ctx.out << "gen-workload: " << samples.size() << " profile samples\n";
  }
  return kOk;
}

}  // namespace detail

// `args` excludes the program name; `env` is the process environment.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
               const std::map<std::string, std::string>& env = {}) {
  CLI::App app{"specedge: speculative-decoding serving simulator and tools", "specedge"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> sets;
  bool no_timestamp = false;
  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "JSON experiment config");
    sc->add_option("--seed", seed, "global seed");
    sc->add_option("--out", out_dir, "output directory");
    sc->add_option("--set", sets, "override a dotted key, e.g. --set sim.n_devices=16")->allow_extra_args(false);
    sc->add_flag("--no-timestamp", no_timestamp, "omit the creation time from trace metadata");
  };

  auto* simulate = app.add_subcommand("simulate", "run one simulation; writes trace.csv and summary.json");
  add_common(simulate);

  auto* capacity = app.add_subcommand("capacity", "device-count sweep; writes capacity.csv");
  add_common(capacity);
  std::optional<int> cap_class;
  std::optional<double> cap_eps;
  std::optional<std::string> cap_sweep;
  capacity->add_option("--class", cap_class, "restrict to one SLO class index");
  capacity->add_option("--epsilon", cap_eps, "violation-rate threshold");
  capacity->add_option("--sweep", cap_sweep, "device counts: 4,8,16 or lo:hi:step");

  auto* fit = app.add_subcommand("fit-estimator", "fit the batch latency model; writes latency_model.txt");
  add_common(fit);
  bool synthetic = false;
  std::optional<double> noise_ms;
  std::optional<std::string> preset, data_path;
  std::optional<int> n_boot, n_configs;
  fit->add_flag("--synthetic", synthetic, "fit on a dataset generated from the preset");
  fit->add_option("--noise", noise_ms, "synthetic noise standard deviation, ms");
  fit->add_option("--preset", preset, "latency preset (appendix-c, a100-qwen32b-n566, instant)");
  fit->add_option("--data", data_path, "profile dataset CSV");
  fit->add_option("--n-boot", n_boot, "bootstrap resamples (0 disables)");
  fit->add_option("--configs", n_configs, "synthetic configurations");

  auto* predictor = app.add_subcommand("predictor", "train or evaluate the rejection predictor");
  predictor->require_subcommand(1);
  auto* train = predictor->add_subcommand("train", "train; writes predictor.txt and predictor_report.json");
  auto* eval = predictor->add_subcommand("eval", "evaluate a model on a corpus");
  std::optional<std::string> corpus_path, model_path;
  for (auto* sc : {train, eval}) {
    add_common(sc);
    sc->add_option("--corpus", corpus_path, "corpus CSV (generated when omitted)");
  }
  eval->add_option("--model", model_path, "predictor model file");

  auto* gen = app.add_subcommand("gen-workload", "write a synthetic corpus or latency profile dataset");
  add_common(gen);
  std::string kind = "corpus";
  gen->add_option("--kind", kind, "corpus or profile")->check(CLI::IsMember({"corpus", "profile"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    ConfigSources src;
    src.env = env;
    src.file = config_path;
    src.overrides = sets;
    auto add = [&](const std::string& key, const json& v) { src.overrides.push_back(key + "=" + v.dump()); };
    if (seed) add("seed", *seed);
    if (out_dir) add("out", *out_dir);
    if (cap_eps) add("capacity.epsilon", *cap_eps);
    if (cap_sweep) add("capacity.sweep", detail::parse_sweep(*cap_sweep));
    if (noise_ms) add("latency.fit.noise_ms", *noise_ms);
    if (preset) add("latency.preset", *preset);
    if (data_path) add("latency.fit.data_path", *data_path);
    if (n_boot) add("latency.fit.n_boot", *n_boot);
    if (n_configs) add("latency.fit.configs", *n_configs);
    if (corpus_path) add("predictor.corpus_path", *corpus_path);
    if (model_path) add("predictor.model_path", *model_path);

    detail::Context ctx{load_config(src), !no_timestamp, &out};
    if (*simulate) return detail::cmd_simulate(ctx);
    if (*capacity) return detail::cmd_capacity(ctx, cap_class);
    if (*fit) {
      detail::FitSource source;
      if (!ctx.cfg.latency.fit.data_path.empty())
        source = detail::FitSource::kData;
      else if (synthetic)
        source = detail::FitSource::kSynthetic;
      else if (preset)
        source = detail::FitSource::kPreset;
      else
        throw ConfigError("latency.fit.data_path", "no data source; pass --data, --synthetic or --preset");
      return detail::cmd_fit_estimator(ctx, source);
    }
    if (*train) return detail::cmd_predictor_train(ctx);
    if (*eval) return detail::cmd_predictor_eval(ctx);
    if (*gen) return detail::cmd_gen_workload(ctx, kind);
    err << "error: no command\n";
    return kConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ContractError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace specedge::cli

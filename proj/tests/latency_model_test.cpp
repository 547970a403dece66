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

#include "specedge/latency_model.hpp"

#include "test_support.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "specedge/ols_fit.hpp"
#include "specedge/workload.hpp"

namespace specedge::latency {
namespace {

constexpr LatencyModel kAppendix = presets::kA100Qwen32B;

// Independent evaluation in long double.
long double reference_time(long double a, long double b, long double r, long double c, long double n_lin,
                           long double n_int, long double n_cached) {
  return a * n_lin + b * n_int + r * n_cached + c;
}

TEST_CASE("BatchFeatures.Examples") {
  const std::vector<RequestShape> cold = {{1000, 0}};
  CHECK_EQ(batch_features(cold), (BatchFeatures{1000, 1'000'000, 0}));
  const std::vector<RequestShape> warm = {{5, 500}};
  CHECK_EQ(batch_features(warm), (BatchFeatures{5, 2525, 500}));
  CHECK_EQ(batch_features({}), (BatchFeatures{0, 0, 0}));
  const std::vector<RequestShape> bad = {{0, 10}};
  CHECK_THROWS_AS(batch_features(bad), ContractError);
}

TEST_CASE("BatchFeatures.AdditiveOverRequests") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    std::vector<RequestShape> a, b;
    for (auto n = rng.uniform_int(0, 6); n > 0; --n) a.push_back({rng.uniform_int(1, 3000), rng.uniform_int(0, 4000)});
    for (auto n = rng.uniform_int(0, 6); n > 0; --n) b.push_back({rng.uniform_int(1, 3000), rng.uniform_int(0, 4000)});
    auto both = a;
    both.insert(both.end(), b.begin(), b.end());
    REQUIRE_EQ(batch_features(both), batch_features(a) + batch_features(b));
  }
}

TEST_CASE("PredictBatchTime.AppendixValues") {
  CHECK_EQ(predict_batch_time(kAppendix, {}), 1.486e-2);
  const double mid = predict_batch_time(kAppendix, {100, 10000, 500});
  const auto mid_ref = reference_time(3.314e-5L, 3.45e-8L, 4.62e-6L, 1.486e-2L, 100, 10000, 500);
  CHECK_NEAR(mid, static_cast<double>(mid_ref), 1e-12 * mid);
  CHECK_NEAR(mid, 0.020829, 1e-12);
  const double cold = predict_batch_time(kAppendix, {1000, 1e6, 0});
  CHECK_NEAR(cold, 0.08250, 1e-12);
}

TEST_CASE("PredictBatchTime.AffineAndMonotone") {
  Rng rng(8);
  for (int i = 0; i < 5000; ++i) {
    const BatchFeatures x{rng.uniform(0, 5000), rng.uniform(0, 1e7), rng.uniform(0, 1e4)};
    const BatchFeatures y{rng.uniform(0, 5000), rng.uniform(0, 1e7), rng.uniform(0, 1e4)};
    const double lhs = predict_batch_time(kAppendix, x + y);
    const double rhs = predict_batch_time(kAppendix, x) + predict_batch_time(kAppendix, y) - kAppendix.c;
    REQUIRE_NEAR(lhs, rhs, 1e-12 * std::max(1.0, lhs));
    const RequestShape extra{rng.uniform_int(1, 500), rng.uniform_int(0, 2000)};
    REQUIRE_GT(predict_batch_time(kAppendix, x + request_features(extra)), predict_batch_time(kAppendix, x));
  }
}

TEST_CASE("Presets.Lookup") {
  CHECK_EQ(*presets::by_name("appendix-c"), kAppendix);
  CHECK_EQ(*presets::by_name("a100-qwen32b"), kAppendix);
  CHECK_EQ(presets::by_name("a100-qwen32b-n566")->a, 143.39e-6);
  CHECK_EQ(presets::by_name("instant")->c, 0.0);
  CHECK_FALSE(presets::by_name("h100"));
}

TEST_CASE("ModelFile.RoundTrip") {
  ModelFile mf;
  mf.model = {1.0 / 3.0, 2.5e-9, 4.62e-6, 0.01486};
  mf.intervals["a"] = {0.3, 0.4};
  mf.metadata["source"] = "unit";
  std::stringstream ss;
  write_model_file(ss, mf);
  const auto back = read_model_file(ss);
  CHECK_EQ(back.model, mf.model);
  CHECK_EQ(back.intervals.at("a").hi, 0.4);
  CHECK_EQ(back.metadata.at("source"), "unit");
}

TEST_CASE("ModelFile.Malformed") {
  std::stringstream no_header("a=1\n");
  CHECK_THROWS_AS(read_model_file(no_header), DataError);
  std::stringstream missing(std::string(kModelFileHeader) + "\na=1\nb_compute=1\nc=1\n");
  CHECK_THROWS_AS(read_model_file(missing), DataError);
  std::stringstream junk(std::string(kModelFileHeader) + "\na=1x\n");
  CHECK_THROWS_AS(read_model_file(junk), DataError);
}

std::vector<workload::ProfileSample> appendix_dataset(double noise, std::uint64_t seed) {
  return workload::gen_latency_profile_dataset(kAppendix, workload::kDefaultProfileConfigs, noise, Rng(seed));
}

TEST_CASE("FitOls.NoiselessRecovery") {
  const auto fit = fit_ols(appendix_dataset(0.0, 1));
  const auto got = fit.model.coefficients(), want = kAppendix.coefficients();
  for (std::size_t j = 0; j < 4; ++j) {
    INFO(kCoefficientNames[j]);
    CHECK_NEAR(got[j], want[j], 1e-9 * want[j]);
  }
  CHECK_NEAR(fit.report.train.r2, 1.0, 1e-12);
  CHECK_NEAR(fit.report.test.r2, 1.0, 1e-12);
  CHECK_LT(fit.report.test.max_error_s, 1e-12);
}

TEST_CASE("FitOls.ConstantLatency") {
  auto samples = appendix_dataset(0.0, 2);
  for (auto& s : samples) s.latency_s = 0.05;
  const auto fit = fit_ols(samples);
  CHECK_NEAR(fit.model.a, 0.0, 1e-12);
  CHECK_NEAR(fit.model.b_compute, 0.0, 1e-15);
  CHECK_NEAR(fit.model.b_read, 0.0, 1e-12);
  CHECK_NEAR(fit.model.c, 0.05, 1e-12);
}

TEST_CASE("FitOls.RankDeficientNamesColumns") {
  auto samples = appendix_dataset(0.0, 3);
  for (auto& s : samples)
    for (auto& r : s.requests) r.l_cached = 0;
  try {
    fit_ols(samples);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    INFO(e.what());
    CHECK_NE(std::string(e.what()).find("N_cached"), std::string::npos);
  }
}

TEST_CASE("FitOls.TooFewSamples") {
  auto samples = appendix_dataset(0.0, 4);
  std::vector<Observation> obs = observations(samples);
  const std::vector<std::size_t> train = {0, 1, 2, 3}, test = {4};
  CHECK_THROWS_AS(fit_ols(obs, train, test), DataError);
}

// With an intercept, training residuals sum to zero.
TEST_CASE("FitOls.ResidualsSumToZero") {
  const auto samples = appendix_dataset(0.004, 5);
  const auto fit = fit_ols(samples);
  double sum = 0.0, scale = 0.0;
  for (const auto& s : samples) {
    if (!s.train) continue;
    sum += s.latency_s - predict_batch_time(fit.model, s.features());
    scale += std::abs(s.latency_s);
  }
  CHECK_LT(std::abs(sum), 1e-9 * scale);
}

TEST_CASE("FitOls.AppendixRegimeQuality") {
  const auto fit = fit_ols(appendix_dataset(0.004, 6), FitOptions{5, 0, 6});
  CHECK_GE(fit.report.test.r2, 0.98);
  CHECK_LE(fit.report.test.mape_pct, 10.0);
  CHECK_EQ(fit.report.cv_folds_used, 5);
  CHECK_GT(fit.report.cv_r2_mean, 0.95);
  CHECK(plausible(fit.model));
  CHECK_GE(fit.report.train.rmse_s, fit.report.train.mae_s);
  CHECK_LE(fit.report.train.r2, 1.0);
}

TEST_CASE("Bootstrap.NoiselessIsDegenerate") {
  const auto samples = appendix_dataset(0.0, 7);
  const auto fit = fit_ols(samples, FitOptions{5, 200, 7});
  REQUIRE(fit.report.bootstrap);
  for (const auto& ci : fit.report.bootstrap->intervals) CHECK_LE(ci.hi - ci.lo, 1e-9 * std::max(1.0, std::abs(ci.hi)));
}

TEST_CASE("Bootstrap.DeterministicAndValidated") {
  const auto obs = observations(appendix_dataset(0.004, 8));
  const auto idx = detail::all_indices(obs.size());
  const auto a = bootstrap_ci(obs, idx, 150, 99);
  const auto b = bootstrap_ci(obs, idx, 150, 99);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK_EQ(a.intervals[j].lo, b.intervals[j].lo);
    CHECK_EQ(a.intervals[j].hi, b.intervals[j].hi);
  }
  CHECK_THROWS_AS(bootstrap_ci(obs, idx, 99, 1), ContractError);
}

// Percentile intervals should cover the planted coefficient at close to the
// nominal rate; fits should also land within 3 standard errors.
TEST_CASE("Bootstrap.CoverageMonteCarlo") {
  constexpr int kExperiments = 100;
  std::array<int, 4> covered{}, within_3se{};
  for (int e = 0; e < kExperiments; ++e) {
    const auto fit = fit_ols(appendix_dataset(0.004, 1000 + static_cast<std::uint64_t>(e)),
                             FitOptions{0, 1000, static_cast<std::uint64_t>(e)});
    const auto& boot = *fit.report.bootstrap;
    const auto got = fit.model.coefficients(), want = kAppendix.coefficients();
    for (std::size_t j = 0; j < 4; ++j) {
      covered[j] += boot.intervals[j].lo <= want[j] && want[j] <= boot.intervals[j].hi;
      within_3se[j] += std::abs(got[j] - want[j]) <= 3 * boot.standard_errors[j];
    }
  }
  for (std::size_t j = 0; j < 4; ++j) {
    INFO(kCoefficientNames[j]);
    CHECK_GE(covered[j], 90);
    CHECK_GE(within_3se[j], 95);
  }
}

TEST_CASE("Bootstrap.ReadCoefficientIntervalWidth") {
  const auto fit = fit_ols(appendix_dataset(0.004, 9), FitOptions{0, 1000, 9});
  const auto& ci = fit.report.bootstrap->intervals[2];
  const double rel_half_width = (ci.hi - ci.lo) / 2 / fit.model.b_read;
  CHECK_GT(rel_half_width, 0.02);
  CHECK_LT(rel_half_width, 0.40);
  CHECK_LE(ci.lo, fit.model.b_read);
  CHECK_GE(ci.hi, fit.model.b_read);
}

TEST_CASE("RegimeDiagnostics.NoiselessHasNoError") {
  const auto samples = appendix_dataset(0.0, 10);
  const auto d = regime_diagnostics(samples, kAppendix);
  CHECK_EQ(d.regimes.size(), 3U);
  for (const auto& [regime, s] : d.regimes) {
    CHECK_LT(s.mean_abs_error_s, 1e-15);
    CHECK_LT(s.p95_abs_error_s, 1e-15);
  }
}

TEST_CASE("RegimeDiagnostics.MemoryBoundIsReadDominated") {
  const auto samples = appendix_dataset(0.004, 11);
  const auto d = regime_diagnostics(samples, kAppendix);
  const auto& mem = d.regimes.at(workload::Regime::kMemoryBound);
  const auto reads = mem.dominant.count(Component::kCachedRead) ? mem.dominant.at(Component::kCachedRead) : 0;
  CHECK_GT(2 * reads, mem.n);
}

// Share of the interaction term in the full prediction for one cold request.
double interaction_share(const LatencyModel& m, double l_new) {
  const BatchFeatures f{l_new, l_new * l_new, 0};
  return component_terms(m, f)[1] / predict_batch_time(m, f);
}

// Under these coefficients the interaction term dominates the workload terms
// of every cold configuration with L_new >= 1200, but it exceeds 70% of the
// full prediction only for longer single requests.
TEST_CASE("RegimeDiagnostics.ColdStartInteractionShare") {
  for (const auto& s : appendix_dataset(0.0, 12)) {
    double l_new = 0;
    bool cold = true;
    for (const auto& r : s.requests) {
      l_new += static_cast<double>(r.l_new);
      cold = cold && r.l_cached == 0;
    }
    if (!cold || l_new < 1200 || s.requests.size() != 1) continue;
    CHECK_EQ(dominant_component(kAppendix, s.features()), Component::kInteraction);
  }
  // Solve b L^2 = 0.7 (a L + b L^2 + c) for the crossover length.
  const double a = kAppendix.a, b = kAppendix.b_compute, c = kAppendix.c;
  const double qa = 0.3 * b, qb = -0.7 * a, qc = -0.7 * c;
  const double crossover = (-qb + std::sqrt(qb * qb - 4 * qa * qc)) / (2 * qa);
  CHECK_GT(crossover, 1200.0);
  CHECK_LT(interaction_share(kAppendix, 1200), 0.70);
  CHECK_GT(interaction_share(kAppendix, std::ceil(crossover) + 1), 0.70);
  CHECK_LT(interaction_share(kAppendix, std::floor(crossover) - 1), 0.70);
}

}  // namespace
}  // namespace specedge::latency

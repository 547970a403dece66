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

// Ordinary least squares for the additive latency model, plus the
// validation tooling around it: split metrics, k-fold cross-validation,
// percentile bootstrap intervals and per-regime error breakdown.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"
#include "specedge/rng.hpp"
#include "specedge/workload.hpp"

namespace specedge::latency {

struct Observation {
  BatchFeatures features;
  double latency_s = 0.0;
};

inline std::vector<Observation> observations(const std::vector<workload::ProfileSample>& samples) {
  std::vector<Observation> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.features(), s.latency_s});
  return out;
}

struct SplitMetrics {
  std::size_t n = 0;
  double r2 = 0.0;
  double adjusted_r2 = 0.0;
  double rmse_s = 0.0;
  double mae_s = 0.0;
  double mape_pct = 0.0;
  std::size_t mape_excluded = 0;  // samples under 1 ms left out of MAPE
  double max_error_s = 0.0;
};

struct BootstrapResult {
  std::array<CoefficientInterval, 4> intervals{};
  std::array<double, 4> standard_errors{};
  int iterations = 0;
  int redraws = 0;  // degenerate resamples that were drawn again
};

struct FitReport {
  SplitMetrics train;
  SplitMetrics test;
  double cv_r2_mean = 0.0;
  double cv_r2_sd = 0.0;
  int cv_folds_used = 0;
  double condition_number = 0.0;
  bool used_qr = false;
  std::optional<BootstrapResult> bootstrap;
};

struct FitResult {
  LatencyModel model;
  FitReport report;
};

struct FitOptions {
  int cv_folds = 5;
  int n_boot = 0;  // 0 skips the bootstrap
  std::uint64_t seed = 0;
  double max_condition = 1e6;  // on the column-scaled design
};

inline constexpr std::array<const char*, 4> kDesignColumns = {"N_linear", "N_interactions", "N_cached",
                                                               "intercept"};
inline constexpr double kMapeFloor = 1e-3;

namespace detail {

// Dense row-major matrix; only what the 4-column least-squares problem needs.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

struct QrSolve {
  std::size_t rank = 0;
  std::vector<double> x;      // zero for columns beyond the rank
  double residual_norm = 0.0;
};

// Householder QR with column pivoting. Pivots with |R_kk| <= tol * |R_00|
// count as rank-deficient.
inline QrSolve qr_solve(Matrix m, std::vector<double> b, double tol = 1e-10) {
  const std::size_t n = m.rows, k = m.cols;
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<double> norms(k, 0.0);
  auto col_norm2 = [&](std::size_t j, std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < n; ++i) s += m(i, j) * m(i, j);
    return s;
  };
  QrSolve out;
  double r00 = 0.0;
  const std::size_t steps = std::min(n, k);
  std::size_t step = 0;
  for (; step < steps; ++step) {
    for (std::size_t j = step; j < k; ++j) norms[j] = col_norm2(j, step);
    const auto piv = static_cast<std::size_t>(
        std::max_element(norms.begin() + static_cast<std::ptrdiff_t>(step), norms.end()) - norms.begin());
    if (piv != step) {
      for (std::size_t i = 0; i < n; ++i) std::swap(m(i, step), m(i, piv));
      std::swap(perm[step], perm[piv]);
    }
    const double alpha_norm = std::sqrt(col_norm2(step, step));
    if (step == 0) r00 = alpha_norm;
    if (alpha_norm <= tol * r00 || alpha_norm == 0.0) break;
    const double alpha = m(step, step) > 0 ? -alpha_norm : alpha_norm;
    std::vector<double> v(n - step);
    for (std::size_t i = step; i < n; ++i) v[i - step] = m(i, step);
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 > 0.0) {
      auto reflect = [&](auto&& get) {
        double d = 0.0;
        for (std::size_t i = step; i < n; ++i) d += v[i - step] * get(i);
        return 2.0 * d / vnorm2;
      };
      for (std::size_t j = step; j < k; ++j) {
        const double f = reflect([&](std::size_t i) { return m(i, j); });
        for (std::size_t i = step; i < n; ++i) m(i, j) -= f * v[i - step];
      }
      const double f = reflect([&](std::size_t i) { return b[i]; });
      for (std::size_t i = step; i < n; ++i) b[i] -= f * v[i - step];
    }
  }
  out.rank = step;
  std::vector<double> z(k, 0.0);
  for (std::size_t r = out.rank; r-- > 0;) {
    double acc = b[r];
    for (std::size_t j = r + 1; j < out.rank; ++j) acc -= m(r, j) * z[j];
    z[r] = acc / m(r, r);
  }
  out.x.assign(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) out.x[perm[j]] = z[j];
  double res = 0.0;
  for (std::size_t i = out.rank; i < n; ++i) res += b[i] * b[i];
  out.residual_norm = std::sqrt(res);
  return out;
}

// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
template <std::size_t N>
std::array<double, N> symmetric_eigenvalues(std::array<std::array<double, N>, N> a) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < N; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::array<double, N> ev{};
  for (std::size_t i = 0; i < N; ++i) ev[i] = a[i][i];
  return ev;
}

// Solves G x = r for symmetric positive definite G.
template <std::size_t N>
std::array<double, N> cholesky_solve(const std::array<std::array<double, N>, N>& g, const std::array<double, N>& r) {
  std::array<std::array<double, N>, N> l{};
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = g[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      l[i][j] = i == j ? std::sqrt(std::max(s, 0.0)) : s / l[j][j];
    }
  std::array<double, N> y{}, x{};
  for (std::size_t i = 0; i < N; ++i) {
    double s = r[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i][k] * y[k];
    y[i] = s / l[i][i];
  }
  for (std::size_t i = N; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < N; ++k) s -= l[k][i] * x[k];
    x[i] = s / l[i][i];
  }
  return x;
}

inline Matrix design(std::span<const Observation> obs, std::span<const std::size_t> idx) {
  Matrix x(idx.size(), 4);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& f = obs[idx[r]].features;
    x(r, 0) = f.n_linear;
    x(r, 1) = f.n_interactions;
    x(r, 2) = f.n_cached;
    x(r, 3) = 1.0;
  }
  return x;
}

// Columns that lie in the span of the remaining columns.
inline std::vector<std::string> collinear_columns(const Matrix& xs) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < xs.cols; ++j) {
    std::vector<double> col(xs.rows);
    double norm = 0.0;
    for (std::size_t i = 0; i < xs.rows; ++i) {
      col[i] = xs(i, j);
      norm += col[i] * col[i];
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      names.emplace_back(kDesignColumns[j]);
      continue;
    }
    Matrix others(xs.rows, xs.cols - 1);
    for (std::size_t i = 0; i < xs.rows; ++i)
      for (std::size_t k = 0, o = 0; k < xs.cols; ++k)
        if (k != j) others(i, o++) = xs(i, k);
    if (qr_solve(others, col).residual_norm <= 1e-9 * norm) names.emplace_back(kDesignColumns[j]);
  }
  return names;
}

struct Solution {
  std::array<double, 4> coeffs{};
  double condition = 0.0;
  bool used_qr = false;
};

inline Solution solve(std::span<const Observation> obs, std::span<const std::size_t> idx, double max_condition) {
  if (idx.size() < 4) throw DataError("OLS: need at least 4 observations for 4 coefficients");
  Matrix xs = design(obs, idx);
  std::vector<double> y(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) y[r] = obs[idx[r]].latency_s;

  // Unit-max column scaling; raw columns span ten orders of magnitude.
  std::array<double, 4> scale = {1.0, 1.0, 1.0, 1.0};
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < xs.rows; ++i) m = std::max(m, std::abs(xs(i, j)));
    if (m > 0.0) scale[j] = m;
  }
  for (std::size_t i = 0; i < xs.rows; ++i)
    for (std::size_t j = 0; j < 4; ++j) xs(i, j) /= scale[j];

  Solution sol;
  const auto qr = qr_solve(xs, y);
  if (qr.rank < 4) {
    std::string msg = "rank-deficient design; collinear columns:";
    for (const auto& n : collinear_columns(xs)) msg += " " + n;
    throw DataError(msg);
  }
  std::array<std::array<double, 4>, 4> gram{};
  std::array<double, 4> xty{};
  for (std::size_t i = 0; i < xs.rows; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      xty[j] += xs(i, j) * y[i];
      for (std::size_t k = 0; k < 4; ++k) gram[j][k] += xs(i, j) * xs(i, k);
    }
  const auto ev = symmetric_eigenvalues(gram);
  const double lmin = std::max(*std::min_element(ev.begin(), ev.end()), 0.0);
  const double lmax = *std::max_element(ev.begin(), ev.end());
  sol.condition = lmin > 0.0 ? std::sqrt(lmax / lmin) : std::numeric_limits<double>::infinity();

  std::array<double, 4> beta{};
  if (sol.condition < max_condition) {
    beta = cholesky_solve(gram, xty);
  } else {
    std::copy(qr.x.begin(), qr.x.end(), beta.begin());
    sol.used_qr = true;
  }
  for (std::size_t j = 0; j < 4; ++j) sol.coeffs[j] = beta[j] / scale[j];
  return sol;
}

inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace detail

// Least-squares coefficients over the given rows. Throws DataError naming
// the collinear columns when the design is rank-deficient.
inline LatencyModel solve_ols(std::span<const Observation> obs, std::span<const std::size_t> idx,
                              double max_condition = 1e6) {
  return LatencyModel::from_coefficients(detail::solve(obs, idx, max_condition).coeffs);
}

inline LatencyModel solve_ols(std::span<const Observation> obs) {
  const auto idx = detail::all_indices(obs.size());
  return solve_ols(obs, idx);
}

inline SplitMetrics split_metrics(const LatencyModel& model, std::span<const Observation> obs,
                                  std::span<const std::size_t> idx, int n_predictors = 3) {
  SplitMetrics m;
  m.n = idx.size();
  if (idx.empty()) return m;
  double mean = 0.0;
  for (auto i : idx) mean += obs[i].latency_s;
  mean /= static_cast<double>(idx.size());
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0, ape_sum = 0.0;
  std::size_t ape_n = 0;
  for (auto i : idx) {
    const double y = obs[i].latency_s;
    const double e = y - predict_batch_time(model, obs[i].features);
    ss_res += e * e;
    ss_tot += (y - mean) * (y - mean);
    abs_sum += std::abs(e);
    m.max_error_s = std::max(m.max_error_s, std::abs(e));
    if (y >= kMapeFloor) {
      ape_sum += std::abs(e) / y;
      ++ape_n;
    } else {
      ++m.mape_excluded;
    }
  }
  const auto n = static_cast<double>(idx.size());
  m.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  const double dof = n - n_predictors - 1.0;
  m.adjusted_r2 = dof > 0.0 ? 1.0 - (1.0 - m.r2) * (n - 1.0) / dof : m.r2;
  m.rmse_s = std::sqrt(ss_res / n);
  m.mae_s = abs_sum / n;
  m.mape_pct = ape_n ? 100.0 * ape_sum / static_cast<double>(ape_n) : 0.0;
  return m;
}

// Percentile bootstrap over the training rows. Each resample draws from its
// own keyed stream, so the result does not depend on evaluation order.
inline BootstrapResult bootstrap_ci(std::span<const Observation> obs, std::span<const std::size_t> train_idx,
                                    int n_boot, std::uint64_t seed, double max_condition = 1e6) {
  require(n_boot >= 100, "bootstrap_ci: need at least 100 resamples");
  require(!train_idx.empty(), "bootstrap_ci: empty training set");
  constexpr int kMaxAttempts = 1000;
  const Rng base = Rng(seed).split("bootstrap");
  BootstrapResult res;
  res.iterations = n_boot;
  std::array<std::vector<double>, 4> draws;
  for (auto& d : draws) d.reserve(static_cast<std::size_t>(n_boot));
  std::vector<std::size_t> sample(train_idx.size());
  for (int b = 0; b < n_boot; ++b) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) throw DataError("bootstrap_ci: resamples are persistently rank-deficient");
      Rng rng = base.split({static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(attempt)});
      for (auto& s : sample)
        s = train_idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(train_idx.size()) - 1))];
      try {
        const auto sol = detail::solve(obs, sample, max_condition);
        for (std::size_t j = 0; j < 4; ++j) draws[j].push_back(sol.coeffs[j]);
        break;
      } catch (const DataError&) {
        ++res.redraws;
      }
    }
  }
  for (std::size_t j = 0; j < 4; ++j) {
    auto& d = draws[j];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    res.standard_errors[j] = std::sqrt(var / static_cast<double>(d.size() - 1));
    std::sort(d.begin(), d.end());
    res.intervals[j] = {detail::quantile_sorted(d, 0.025), detail::quantile_sorted(d, 0.975)};
  }
  return res;
}

// Fits on the training rows only and reports train/test metrics, k-fold
// cross-validated R^2 on the training rows and, optionally, bootstrap CIs.
inline FitResult fit_ols(std::span<const Observation> obs, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> test_idx, const FitOptions& opts = {}) {
  if (train_idx.size() < 5) throw DataError("fit_ols: need at least 5 training samples");
  const auto sol = detail::solve(obs, train_idx, opts.max_condition);
  FitResult out;
  out.model = LatencyModel::from_coefficients(sol.coeffs);
  out.report.condition_number = sol.condition;
  out.report.used_qr = sol.used_qr;
  out.report.train = split_metrics(out.model, obs, train_idx);
  out.report.test = split_metrics(out.model, obs, test_idx);

  if (opts.cv_folds >= 2 && train_idx.size() >= static_cast<std::size_t>(opts.cv_folds) * 2) {
    std::vector<std::size_t> perm(train_idx.begin(), train_idx.end());
    Rng rng = Rng(opts.seed).split("cv");
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    std::vector<double> scores;
    for (int fold = 0; fold < opts.cv_folds; ++fold) {
      std::vector<std::size_t> fit_rows, held;
      for (std::size_t i = 0; i < perm.size(); ++i)
        (static_cast<int>(i % static_cast<std::size_t>(opts.cv_folds)) == fold ? held : fit_rows).push_back(perm[i]);
      try {
        const auto m = solve_ols(obs, fit_rows, opts.max_condition);
        scores.push_back(split_metrics(m, obs, held).r2);
      } catch (const DataError&) {
        // fold skipped; reflected in cv_folds_used
      }
    }
    out.report.cv_folds_used = static_cast<int>(scores.size());
    if (!scores.empty()) {
      const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
      double var = 0.0;
      for (double s : scores) var += (s - mean) * (s - mean);
      out.report.cv_r2_mean = mean;
      out.report.cv_r2_sd = scores.size() > 1 ? std::sqrt(var / static_cast<double>(scores.size() - 1)) : 0.0;
    }
  }
  if (opts.n_boot > 0) out.report.bootstrap = bootstrap_ci(obs, train_idx, opts.n_boot, opts.seed, opts.max_condition);
  return out;
}

inline FitResult fit_ols(const std::vector<workload::ProfileSample>& samples, const FitOptions& opts = {}) {
  const auto obs = observations(samples);
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].train ? train : test).push_back(i);
  return fit_ols(obs, train, test, opts);
}

// Negative intercepts indicate a bad profile.
inline bool plausible(const LatencyModel& m) { return m.all_finite() && m.c >= 0.0; }

// ---------------------------------------------------------------------------
// Error breakdown by regime.

enum class Component { kLinear, kInteraction, kCachedRead };

inline const char* component_name(Component c) {
  switch (c) {
    case Component::kLinear: return "linear";
    case Component::kInteraction: return "interaction";
    case Component::kCachedRead: return "cached_read";
  }
  return "?";
}

// Largest of the three workload terms; the constant overhead is not a
// workload component.
inline Component dominant_component(const LatencyModel& m, const BatchFeatures& f) {
  const auto t = component_terms(m, f);
  if (t[1] >= t[0] && t[1] >= t[2]) return Component::kInteraction;
  if (t[2] >= t[0]) return Component::kCachedRead;
  return Component::kLinear;
}

struct RegimeSummary {
  std::size_t n = 0;
  double mean_abs_error_s = 0.0;
  double p95_abs_error_s = 0.0;
  std::map<Component, std::size_t> dominant;
};

struct RegimeDiagnostics {
  std::map<workload::Regime, RegimeSummary> regimes;
  std::vector<Component> per_sample_dominant;
};

inline RegimeDiagnostics regime_diagnostics(const std::vector<workload::ProfileSample>& samples,
                                            const LatencyModel& model) {
  RegimeDiagnostics d;
  std::map<workload::Regime, std::vector<double>> errors;
  for (const auto& s : samples) {
    const auto f = s.features();
    const auto dom = dominant_component(model, f);
    d.per_sample_dominant.push_back(dom);
    auto& r = d.regimes[s.regime];
    ++r.n;
    ++r.dominant[dom];
    errors[s.regime].push_back(std::abs(s.latency_s - predict_batch_time(model, f)));
  }
  for (auto& [regime, errs] : errors) {
    auto& r = d.regimes[regime];
    r.mean_abs_error_s = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
    std::sort(errs.begin(), errs.end());
    r.p95_abs_error_s = detail::quantile_sorted(errs, 0.95);
  }
  return d;
}

}  // namespace specedge::latency

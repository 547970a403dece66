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

// Additive verification-latency estimator:
//
//   T_batch = a * N_linear + b_compute * N_interactions + b_read * N_cached + c
//
// N_linear sums new tokens, N_interactions sums (L_cached + L_new) * L_new
// query-key pairs, N_cached sums cached prefix tokens.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "specedge/errors.hpp"

namespace specedge::latency {

struct RequestShape {
  std::int64_t l_new = 0;
  std::int64_t l_cached = 0;
};

struct BatchFeatures {
  double n_linear = 0.0;
  double n_interactions = 0.0;
  double n_cached = 0.0;

  BatchFeatures& operator+=(const BatchFeatures& o) {
    n_linear += o.n_linear;
    n_interactions += o.n_interactions;
    n_cached += o.n_cached;
    return *this;
  }
  friend BatchFeatures operator+(BatchFeatures a, const BatchFeatures& b) { return a += b; }
  friend bool operator==(const BatchFeatures&, const BatchFeatures&) = default;
};

inline BatchFeatures request_features(const RequestShape& r) {
  require(r.l_new >= 0 && r.l_cached >= 0, "batch_features: lengths must be non-negative");
  const auto total = r.l_cached + r.l_new;
  return {static_cast<double>(r.l_new), static_cast<double>(total) * static_cast<double>(r.l_new),
          static_cast<double>(r.l_cached)};
}

// An empty batch yields all-zero features, which predicts the overhead c.
inline BatchFeatures batch_features(std::span<const RequestShape> requests) {
  BatchFeatures f;
  for (const auto& r : requests) {
    require(r.l_new >= 1, "batch_features: each request needs at least one new token");
    f += request_features(r);
  }
  return f;
}

struct LatencyModel {
  double a = 0.0;          // s / token
  double b_compute = 0.0;  // s / query-key interaction
  double b_read = 0.0;     // s / cached token
  double c = 0.0;          // s

  std::array<double, 4> coefficients() const { return {a, b_compute, b_read, c}; }
  static LatencyModel from_coefficients(const std::array<double, 4>& x) {
    return {x[0], x[1], x[2], x[3]};
  }
  bool all_finite() const {
    return std::isfinite(a) && std::isfinite(b_compute) && std::isfinite(b_read) && std::isfinite(c);
  }
  friend bool operator==(const LatencyModel&, const LatencyModel&) = default;
};

inline constexpr std::array<const char*, 4> kCoefficientNames = {"a", "b_compute", "b_read", "c"};

inline double predict_batch_time(const LatencyModel& m, const BatchFeatures& f) {
  return m.a * f.n_linear + m.b_compute * f.n_interactions + m.b_read * f.n_cached + m.c;
}

// Additive terms in coefficient order (linear, interaction, cached-read, overhead).
inline std::array<double, 4> component_terms(const LatencyModel& m, const BatchFeatures& f) {
  return {m.a * f.n_linear, m.b_compute * f.n_interactions, m.b_read * f.n_cached, m.c};
}

namespace presets {

// Profiled on a single A100 with a 32B target: the 173-configuration fit
// with bootstrap intervals. Canonical default.
inline constexpr LatencyModel kA100Qwen32B{3.314e-5, 3.45e-8, 4.62e-6, 1.486e-2};

// Earlier 566-batch fit of the same stack. It reports no intercept; the
// canonical overhead is reused.
inline constexpr LatencyModel kA100Qwen32BN566{143.39e-6, 2.53e-9, 2.67e-6, 1.486e-2};

// Zero-cost server; isolates device-side behavior in simulation.
inline constexpr LatencyModel kInstant{0.0, 0.0, 0.0, 0.0};

inline std::optional<LatencyModel> by_name(std::string_view name) {
  if (name == "a100-qwen32b" || name == "appendix-c") return kA100Qwen32B;
  if (name == "a100-qwen32b-n566") return kA100Qwen32BN566;
  if (name == "instant") return kInstant;
  return std::nullopt;
}

}  // namespace presets

// Shortest round-trip decimal representation.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

inline double parse_double(std::string_view s, const std::string& what) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError("cannot parse number for " + what + ": '" + std::string(s) + "'");
  return x;
}

struct CoefficientInterval {
  double lo = 0.0;
  double hi = 0.0;
};

// Structured text: a versioned header line followed by key=value lines.
// Bootstrap intervals (ci.<name>=lo,hi) and free-form metadata (meta.<key>)
// are optional.
struct ModelFile {
  LatencyModel model;
  std::map<std::string, CoefficientInterval> intervals;
  std::map<std::string, std::string> metadata;
};

inline constexpr std::string_view kModelFileHeader = "# specedge latency-model v1";

inline void write_model_file(std::ostream& os, const ModelFile& mf) {
  os << kModelFileHeader << '\n';
  const auto coeffs = mf.model.coefficients();
  for (std::size_t i = 0; i < coeffs.size(); ++i)
    os << kCoefficientNames[i] << '=' << format_double(coeffs[i]) << '\n';
  for (const auto& [name, ci] : mf.intervals)
    os << "ci." << name << '=' << format_double(ci.lo) << ',' << format_double(ci.hi) << '\n';
  for (const auto& [k, v] : mf.metadata) os << "meta." << k << '=' << v << '\n';
}

inline ModelFile read_model_file(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kModelFileHeader)
    throw DataError("latency model file: missing or unsupported header");
  ModelFile mf;
  std::array<std::optional<double>, 4> seen;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("latency model file: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key.rfind("meta.", 0) == 0) {
      mf.metadata[key.substr(5)] = value;
    } else if (key.rfind("ci.", 0) == 0) {
      const auto comma = value.find(',');
      if (comma == std::string::npos) throw DataError("latency model file: malformed interval for " + key);
      mf.intervals[key.substr(3)] = {parse_double(std::string_view(value).substr(0, comma), key),
                                     parse_double(std::string_view(value).substr(comma + 1), key)};
    } else {
      bool known = false;
      for (std::size_t i = 0; i < kCoefficientNames.size(); ++i) {
        if (key == kCoefficientNames[i]) {
          seen[i] = parse_double(value, key);
          known = true;
        }
      }
      if (!known) throw DataError("latency model file: unknown key '" + key + "'");
    }
  }
  std::array<double, 4> x{};
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw DataError(std::string("latency model file: missing coefficient ") + kCoefficientNames[i]);
    x[i] = *seen[i];
  }
  mf.model = LatencyModel::from_coefficients(x);
  return mf;
}

}  // namespace specedge::latency

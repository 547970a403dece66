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

// Rejection predictor: a small feed-forward classifier over four draft-logit
// statistics, trained with binary cross-entropy and mini-batch SGD with
// momentum. Output is P(accepted); the decision threshold is chosen on a
// validation split to cap the false-positive rate on rejected tokens.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "specedge/errors.hpp"
#include "specedge/latency_model.hpp"
#include "specedge/rng.hpp"
#include "specedge/workload.hpp"

namespace specedge::controller {

inline constexpr std::size_t kNumFeatures = 4;
using FeatureVector = std::array<double, kNumFeatures>;

// (confidence, entropy, margin, stddev).
inline FeatureVector extract_features(const workload::DraftStep& step) {
  const auto& f = step.features;
  return {f.confidence, f.entropy, f.margin, f.stddev};
}

inline FeatureVector extract_features(const workload::CorpusRecord& r) {
  return {r.features.confidence, r.features.entropy, r.features.margin, r.features.stddev};
}

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out
};

class PredictorModel {
 public:
  FeatureVector mean{};
  FeatureVector scale{1.0, 1.0, 1.0, 1.0};
  std::vector<DenseLayer> layers;  // ReLU between layers, sigmoid on the single output
  double threshold = 0.5;

  // Predicted probability that the token is accepted.
  double score(const FeatureVector& x) const {
    std::vector<double> a(kNumFeatures), next;
    for (std::size_t i = 0; i < kNumFeatures; ++i) a[i] = (x[i] - mean[i]) / scale[i];
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      next.assign(static_cast<std::size_t>(layer.out), 0.0);
      for (int o = 0; o < layer.out; ++o) {
        double z = layer.bias[static_cast<std::size_t>(o)];
        const double* w = &layer.weights[static_cast<std::size_t>(o * layer.in)];
        for (int i = 0; i < layer.in; ++i) z += w[i] * a[static_cast<std::size_t>(i)];
        next[static_cast<std::size_t>(o)] = (l + 1 < layers.size()) ? std::max(0.0, z) : z;
      }
      a.swap(next);
    }
    return 1.0 / (1.0 + std::exp(-a.at(0)));
  }

  bool predicts_accept(const FeatureVector& x) const { return score(x) >= threshold; }

  std::vector<int> dims() const {
    std::vector<int> d;
    if (layers.empty()) return d;
    d.push_back(layers.front().in);
    for (const auto& l : layers) d.push_back(l.out);
    return d;
  }

  void validate() const {
    require(!layers.empty(), "PredictorModel: no layers");
    require(layers.front().in == static_cast<int>(kNumFeatures), "PredictorModel: input width must be 4");
    require(layers.back().out == 1, "PredictorModel: output width must be 1");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      require(layer.weights.size() == static_cast<std::size_t>(layer.in * layer.out) &&
                  layer.bias.size() == static_cast<std::size_t>(layer.out),
              "PredictorModel: layer parameter count mismatch");
      if (l > 0) require(layers[l - 1].out == layer.in, "PredictorModel: layer widths do not chain");
    }
    for (double s : scale) require(s > 0.0, "PredictorModel: feature scale must be positive");
  }
};

struct TrainConfig {
  std::vector<int> hidden = {32, 16};
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 60;
  int batch_size = 64;
  int patience = 10;               // epochs without validation improvement
  double validation_fraction = 0.2;
  double fpr_target = 0.45;
  std::uint64_t seed = 0;
};

struct ClassifierReport {
  std::int64_t tn = 0, fp = 0, fn = 0, tp = 0;
  double accuracy = 0.0;
  double auc = 0.5;
  double recall_accepted = 0.0;
  double specificity = 0.0;
  double fpr = 0.0;
  double balanced_accuracy = 0.0;
};

// Rejected (0) is the negative class, accepted (1) the positive class.
inline ClassifierReport report_from_counts(std::int64_t tn, std::int64_t fp, std::int64_t fn, std::int64_t tp,
                                           double auc = 0.5) {
  require(tn >= 0 && fp >= 0 && fn >= 0 && tp >= 0, "report_from_counts: negative count");
  ClassifierReport r{tn, fp, fn, tp};
  const auto total = tn + fp + fn + tp;
  const auto neg = tn + fp;
  const auto pos = tp + fn;
  r.accuracy = total ? static_cast<double>(tn + tp) / static_cast<double>(total) : 0.0;
  r.fpr = neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0;
  r.specificity = 1.0 - r.fpr;
  r.recall_accepted = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
  r.balanced_accuracy = (r.recall_accepted + r.specificity) / 2.0;
  r.auc = auc;
  return r;
}

// Mann-Whitney U / (n_pos * n_neg), ties at midrank.
inline double auc_mann_whitney(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  const double u = rank_sum_pos - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Scores and hard decisions -> confusion counts and derived metrics.
inline ClassifierReport classification_report(std::span<const double> scores, std::span<const int> decisions,
                                              std::span<const int> labels) {
  require(scores.size() == labels.size() && decisions.size() == labels.size(), "report: size mismatch");
  std::int64_t tn = 0, fp = 0, fn = 0, tp = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) (decisions[i] ? tp : fn) += 1;
    else (decisions[i] ? fp : tn) += 1;
  }
  return report_from_counts(tn, fp, fn, tp, auc_mann_whitney(scores, labels));
}

inline ClassifierReport evaluate_predictor(const PredictorModel& model, std::span<const workload::CorpusRecord> corpus) {
  std::vector<double> scores;
  std::vector<int> decisions, labels;
  scores.reserve(corpus.size());
  for (const auto& r : corpus) {
    const double s = model.score(extract_features(r));
    scores.push_back(s);
    decisions.push_back(s >= model.threshold ? 1 : 0);
    labels.push_back(r.label);
  }
  return classification_report(scores, decisions, labels);
}

// Deterministic split by session so windows of one session stay together.
struct CorpusSplit {
  std::vector<workload::CorpusRecord> train;
  std::vector<workload::CorpusRecord> test;
};

inline CorpusSplit split_by_session(std::span<const workload::CorpusRecord> corpus, double test_fraction,
                                    std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "split_by_session: fraction must be in (0, 1)");
  CorpusSplit s;
  const Rng base = Rng(seed).split("corpus-split");
  for (const auto& r : corpus) {
    Rng rng = base.split(r.session_id);
    (rng.uniform() < test_fraction ? s.test : s.train).push_back(r);
  }
  return s;
}

namespace detail {

// Lowest threshold whose false-positive rate on `neg_scores` stays within target.
inline double threshold_for_fpr(std::vector<double> neg_scores, double target) {
  if (neg_scores.empty()) return 0.5;
  std::sort(neg_scores.begin(), neg_scores.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(std::floor(target * static_cast<double>(neg_scores.size()) + 1e-12));
  if (allowed >= neg_scores.size()) return 0.0;
  return std::nextafter(neg_scores[allowed], std::numeric_limits<double>::infinity());
}

struct Net {
  std::vector<DenseLayer> layers;
};

inline double bce_loss(const PredictorModel& m, std::span<const FeatureVector> x, std::span<const int> y) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = std::clamp(m.score(x[i]), 1e-12, 1.0 - 1e-12);
    loss -= y[i] ? std::log(p) : std::log(1.0 - p);
  }
  return x.empty() ? 0.0 : loss / static_cast<double>(x.size());
}

}  // namespace detail

inline PredictorModel train_predictor(std::span<const workload::CorpusRecord> corpus, const TrainConfig& cfg = {}) {
  require(cfg.learning_rate > 0.0 && cfg.epochs >= 1 && cfg.batch_size >= 1, "train_predictor: bad config");
  require(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0,
          "train_predictor: validation_fraction must be in (0, 1)");
  for (int h : cfg.hidden) require(h >= 1, "train_predictor: hidden widths must be positive");
  std::size_t n_pos = 0;
  for (const auto& r : corpus) n_pos += r.label == 1;
  if (n_pos == 0 || n_pos == corpus.size()) throw DataError("train_predictor: corpus must contain both classes");

  const Rng root = Rng(cfg.seed).split("predictor");
  auto split = split_by_session(corpus, cfg.validation_fraction, cfg.seed);
  if (split.train.empty() || split.test.empty()) {
    // Too few sessions for a session-level split; fall back to records.
    split = {};
    Rng r = root.split("record-split");
    for (const auto& rec : corpus) (r.uniform() < cfg.validation_fraction ? split.test : split.train).push_back(rec);
  }
  if (split.train.empty() || split.test.empty())
    throw DataError("train_predictor: corpus too small for a validation split");

  std::vector<FeatureVector> xs, xv;
  std::vector<int> ys, yv;
  for (const auto& r : split.train) xs.push_back(extract_features(r)), ys.push_back(r.label);
  for (const auto& r : split.test) xv.push_back(extract_features(r)), yv.push_back(r.label);

  PredictorModel model;
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    double mean = 0.0, var = 0.0;
    for (const auto& x : xs) mean += x[j];
    mean /= static_cast<double>(xs.size());
    for (const auto& x : xs) var += (x[j] - mean) * (x[j] - mean);
    model.mean[j] = mean;
    const double sd = std::sqrt(var / static_cast<double>(xs.size()));
    model.scale[j] = sd > 1e-12 ? sd : 1.0;
  }

  // He-uniform initialization.
  std::vector<int> dims = {static_cast<int>(kNumFeatures)};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  Rng init = root.split("init");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer{dims[l], dims[l + 1], {}, std::vector<double>(static_cast<std::size_t>(dims[l + 1]), 0.0)};
    const double bound = std::sqrt(6.0 / dims[l]);
    layer.weights.resize(static_cast<std::size_t>(layer.in * layer.out));
    for (double& w : layer.weights) w = init.uniform(-bound, bound);
    model.layers.push_back(std::move(layer));
  }

  const std::size_t n_layers = model.layers.size();
  std::vector<std::vector<double>> vel_w(n_layers), vel_b(n_layers), grad_w(n_layers), grad_b(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    vel_w[l].assign(model.layers[l].weights.size(), 0.0);
    vel_b[l].assign(model.layers[l].bias.size(), 0.0);
  }
  std::vector<std::vector<double>> act(n_layers + 1), delta(n_layers + 1);
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  PredictorModel best = model;
  double best_loss = detail::bce_loss(model, xv, yv);
  int stale = 0;
  for (int epoch = 0; epoch < cfg.epochs && stale < cfg.patience; ++epoch) {
    Rng shuffle = root.split({0x5f1eULL, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t l = 0; l < n_layers; ++l) {
        grad_w[l].assign(model.layers[l].weights.size(), 0.0);
        grad_b[l].assign(model.layers[l].bias.size(), 0.0);
      }
      for (std::size_t s = start; s < end; ++s) {
        const auto& x = xs[order[s]];
        act[0].resize(kNumFeatures);
        for (std::size_t j = 0; j < kNumFeatures; ++j) act[0][j] = (x[j] - model.mean[j]) / model.scale[j];
        for (std::size_t l = 0; l < n_layers; ++l) {
          const auto& layer = model.layers[l];
          act[l + 1].assign(static_cast<std::size_t>(layer.out), 0.0);
          for (int o = 0; o < layer.out; ++o) {
            double z = layer.bias[static_cast<std::size_t>(o)];
            for (int i = 0; i < layer.in; ++i)
              z += layer.weights[static_cast<std::size_t>(o * layer.in + i)] * act[l][static_cast<std::size_t>(i)];
            act[l + 1][static_cast<std::size_t>(o)] = (l + 1 < n_layers) ? std::max(0.0, z) : z;
          }
        }
        // d(BCE)/d(logit) = sigmoid(z) - y.
        const double p = 1.0 / (1.0 + std::exp(-act[n_layers][0]));
        delta[n_layers].assign(1, p - ys[order[s]]);
        for (std::size_t l = n_layers; l-- > 0;) {
          const auto& layer = model.layers[l];
          delta[l].assign(static_cast<std::size_t>(layer.in), 0.0);
          for (int o = 0; o < layer.out; ++o) {
            const double d = delta[l + 1][static_cast<std::size_t>(o)];
            if (d == 0.0) continue;
            grad_b[l][static_cast<std::size_t>(o)] += d;
            for (int i = 0; i < layer.in; ++i) {
              const auto wi = static_cast<std::size_t>(o * layer.in + i);
              grad_w[l][wi] += d * act[l][static_cast<std::size_t>(i)];
              delta[l][static_cast<std::size_t>(i)] += d * layer.weights[wi];
            }
          }
          if (l > 0)
            for (std::size_t i = 0; i < delta[l].size(); ++i)
              if (act[l][i] <= 0.0) delta[l][i] = 0.0;
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(end - start);
      for (std::size_t l = 0; l < n_layers; ++l) {
        auto& layer = model.layers[l];
        for (std::size_t i = 0; i < layer.weights.size(); ++i) {
          vel_w[l][i] = cfg.momentum * vel_w[l][i] - step * grad_w[l][i];
          layer.weights[i] += vel_w[l][i];
        }
        for (std::size_t i = 0; i < layer.bias.size(); ++i) {
          vel_b[l][i] = cfg.momentum * vel_b[l][i] - step * grad_b[l][i];
          layer.bias[i] += vel_b[l][i];
        }
      }
    }

    const double loss = detail::bce_loss(model, xv, yv);
    if (loss < best_loss - 1e-6) {
      best_loss = loss;
      best = model;
      stale = 0;
    } else {
      ++stale;
    }
  }

  std::vector<double> neg_scores;
  for (std::size_t i = 0; i < xv.size(); ++i)
    if (yv[i] == 0) neg_scores.push_back(best.score(xv[i]));
  best.threshold = detail::threshold_for_fpr(std::move(neg_scores), cfg.fpr_target);
  return best;
}

// ---------------------------------------------------------------------------
// Persistence: versioned key=value text, shortest round-trip decimals.

inline constexpr std::string_view kPredictorHeader = "# specedge predictor v1";

namespace detail {
inline std::string join(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += latency::format_double(v[i]);
  }
  return s;
}
inline std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& cell : workload::detail::split_csv(s)) out.push_back(latency::parse_double(cell, what));
  return out;
}
}  // namespace detail

inline void write_predictor(std::ostream& os, const PredictorModel& m) {
  os << kPredictorHeader << '\n';
  os << "threshold=" << latency::format_double(m.threshold) << '\n';
  os << "mean=" << detail::join(m.mean) << '\n';
  os << "scale=" << detail::join(m.scale) << '\n';
  os << "layers=" << m.layers.size() << '\n';
  for (const auto& l : m.layers) {
    os << "layer=" << l.in << ',' << l.out << '\n';
    os << "weights=" << detail::join(l.weights) << '\n';
    os << "bias=" << detail::join(l.bias) << '\n';
  }
}

inline PredictorModel read_predictor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kPredictorHeader) throw DataError("predictor file: missing or unsupported header");
  auto next = [&](const std::string& key) {
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos || line.substr(0, eq) != key)
        throw DataError("predictor file: expected '" + key + "', got '" + line + "'");
      return line.substr(eq + 1);
    }
    throw DataError("predictor file: truncated before '" + key + "'");
  };
  PredictorModel m;
  m.threshold = latency::parse_double(next("threshold"), "threshold");
  const auto mean = detail::parse_list(next("mean"), "mean");
  const auto scale = detail::parse_list(next("scale"), "scale");
  if (mean.size() != kNumFeatures || scale.size() != kNumFeatures)
    throw DataError("predictor file: mean/scale must have 4 entries");
  std::copy(mean.begin(), mean.end(), m.mean.begin());
  std::copy(scale.begin(), scale.end(), m.scale.begin());
  const auto n_layers = static_cast<int>(latency::parse_double(next("layers"), "layers"));
  if (n_layers < 1 || n_layers > 64) throw DataError("predictor file: implausible layer count");
  for (int l = 0; l < n_layers; ++l) {
    const auto shape = detail::parse_list(next("layer"), "layer");
    if (shape.size() != 2 || shape[0] < 1 || shape[1] < 1) throw DataError("predictor file: bad layer shape");
    DenseLayer layer{static_cast<int>(shape[0]), static_cast<int>(shape[1]), {}, {}};
    layer.weights = detail::parse_list(next("weights"), "weights");
    layer.bias = detail::parse_list(next("bias"), "bias");
    m.layers.push_back(std::move(layer));
  }
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw DataError(std::string("predictor file: ") + e.what());
  }
  return m;
}

}  // namespace specedge::controller

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

// Speculative verification semantics and drafting-time accounting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "specedge/errors.hpp"
#include "specedge/rng.hpp"

namespace specedge::spec {

using TokenId = int;

// Next-token distribution over a small id space [0, V).
class TokenDist {
 public:
  static constexpr double kNormTolerance = 1e-9;

  explicit TokenDist(std::vector<double> probs) : probs_(std::move(probs)) {
    require(probs_.size() >= 2, "TokenDist: vocabulary size must be >= 2");
    double sum = 0.0;
    for (double p : probs_) {
      require(p >= 0.0 && std::isfinite(p), "TokenDist: probabilities must be finite and >= 0");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= kNormTolerance, "TokenDist: probabilities must sum to 1");
  }

  static TokenDist uniform(std::size_t vocab) {
    return TokenDist(std::vector<double>(vocab, 1.0 / static_cast<double>(vocab)));
  }

  // Point mass on one token.
  static TokenDist delta(std::size_t vocab, TokenId token) {
    std::vector<double> p(vocab, 0.0);
    p.at(static_cast<std::size_t>(token)) = 1.0;
    return TokenDist(std::move(p));
  }

  std::size_t vocab() const { return probs_.size(); }
  double operator[](TokenId t) const { return probs_.at(static_cast<std::size_t>(t)); }
  std::span<const double> probs() const { return probs_; }

  bool contains(TokenId t) const { return t >= 0 && static_cast<std::size_t>(t) < probs_.size(); }

  // Inverse-CDF draw. The final index absorbs rounding in the running sum.
  TokenId sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      if (probs_[i] <= 0.0) continue;
      last_positive = i;
      acc += probs_[i];
      if (u < acc) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(last_positive);
  }

 private:
  std::vector<double> probs_;
};

struct VerificationOutcome {
  int stop_index = 1;    // R in [1, K+1]
  int accepted_len = 0;  // L = R - 1
  TokenId extra_token = 0;
  int wasted = 0;        // max(0, K - L)
};

struct DraftTimeBreakdown {
  double total_s = 0.0;
  double useful_s = 0.0;
  double wdt_s = 0.0;
  double per_token_s = 0.0;
};

// a = min(1, p(t) / q(t)).
inline double acceptance_prob(const TokenDist& p, const TokenDist& q, TokenId token) {
  require(p.contains(token) && q.contains(token), "acceptance_prob: token out of range");
  require(p.vocab() == q.vocab(), "acceptance_prob: vocabulary mismatch");
  const double qt = q[token];
  if (qt <= 0.0) throw InvalidDraftError("acceptance_prob: draft proposed a zero-probability token");
  return std::min(1.0, p[token] / qt);
}

// Accept iff u <= a. Shared with the simulator, which draws against latent
// acceptance probabilities instead of explicit distributions.
inline bool accept_draw(double accept_prob, double u) { return u <= accept_prob; }

// Normalized positive part of p - q. Falls back to p when p <= q everywhere,
// which only happens when p == q and the rejection itself had probability 0.
inline TokenDist residual_dist(const TokenDist& p, const TokenDist& q) {
  require(p.vocab() == q.vocab(), "residual_dist: vocabulary mismatch");
  std::vector<double> r(p.vocab());
  double z = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = std::max(0.0, p.probs()[i] - q.probs()[i]);
    z += r[i];
  }
  if (z <= 0.0) return p;
  for (double& x : r) x /= z;
  return TokenDist(std::move(r));
}

inline int wasted_tokens(int k, int accepted) {
  require(k >= 0 && accepted >= 0, "wasted_tokens: counts must be non-negative");
  require(accepted <= k, "wasted_tokens: accepted length exceeds window");
  return std::max(0, k - accepted);
}

// Walks the block in order and stops at the first rejection. `p_dists` holds
// K + 1 target distributions; the last is used when every draft is accepted.
inline VerificationOutcome verify_block(std::span<const TokenId> draft_tokens,
                                        std::span<const TokenDist> q_dists,
                                        std::span<const TokenDist> p_dists, Rng& rng) {
  const std::size_t k = draft_tokens.size();
  require(k >= 1, "verify_block: empty draft block");
  require(q_dists.size() == k, "verify_block: q_dists length must equal block length");
  require(p_dists.size() == k + 1, "verify_block: p_dists must have block length + 1 entries");

  VerificationOutcome out;
  std::size_t i = 0;
  for (; i < k; ++i) {
    const double a = acceptance_prob(p_dists[i], q_dists[i], draft_tokens[i]);
    if (!accept_draw(a, rng.uniform())) break;
  }
  out.stop_index = static_cast<int>(i) + 1;
  out.accepted_len = static_cast<int>(i);
  out.extra_token = (i < k) ? residual_dist(p_dists[i], q_dists[i]).sample(rng)
                            : p_dists[k].sample(rng);
  out.wasted = wasted_tokens(static_cast<int>(k), out.accepted_len);
  return out;
}

// total is formed as useful + wdt so the decomposition is exact in floating
// point; it agrees with tau_d * K to within one rounding.
inline DraftTimeBreakdown draft_breakdown(int k, int accepted, double tau_d) {
  require(tau_d > 0.0, "draft_breakdown: per-token drafting time must be positive");
  const int w = wasted_tokens(k, accepted);
  DraftTimeBreakdown b;
  b.per_token_s = tau_d;
  b.useful_s = tau_d * accepted;
  b.wdt_s = tau_d * w;
  b.total_s = b.useful_s + b.wdt_s;
  return b;
}

// s = N_v / (T_draft + T_network + T_queue + T_verify).
inline double achieved_speed(double n_verified, double t_draft, double t_network, double t_queue,
                             double t_verify) {
  require(n_verified >= 0.0, "achieved_speed: negative token count");
  require(t_draft >= 0.0 && t_network >= 0.0 && t_queue >= 0.0 && t_verify >= 0.0,
          "achieved_speed: negative time component");
  const double total = t_draft + t_network + t_queue + t_verify;
  require(total > 0.0, "achieved_speed: zero total time");
  return n_verified / total;
}

// Verification-side budget tau = alpha * N_d / s_c - T_draft - T_network.
// Negative means the request is already late when it reaches the server.
inline double server_budget(double alpha, double n_draft, double slo_speed, double t_draft,
                            double t_network) {
  require(slo_speed > 0.0, "server_budget: SLO speed must be positive");
  require(alpha >= 0.0 && alpha <= 1.0, "server_budget: alpha must be in [0, 1]");
  require(n_draft >= 0.0, "server_budget: negative draft length");
  return alpha * n_draft / slo_speed - t_draft - t_network;
}

}  // namespace specedge::spec

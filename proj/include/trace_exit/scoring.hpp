// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Confidence and stability scoring over a window of recent reasoning steps.
//
//   H(p)    = -sum p_i log p_i / log |p|          normalized entropy, in [0, 1]
//   c       = 1 - mean_j H(p_j)                   confidence of an n-token answer
//   ACS(a)  = count(a) / k                        answer consistency
//   CTS(a)  = mean of c_t over steps that gave a  confidence trajectory
//   S(a)    = alpha * ACS(a) + (1 - alpha) * CTS(a)
//
// The selected answer maximizes S; generation may stop once S(selected) >= tau.
// All functions here are pure.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trace_exit/errors.hpp"
#include "trace_exit/token.hpp"

namespace trace_exit {

using CanonicalAnswer = std::string;

// Candidate-token distribution at one answer position. Always renormalized to
// sum to 1, since drivers only see the top-K slice of the vocabulary.
class TokenDistribution {
 public:
  static TokenDistribution from_probabilities(std::vector<double> probs) {
    if (probs.empty()) throw ValidationError("token distribution is empty");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("token probability outside [0, 1]");
      total += p;
    }
    if (total <= 0.0) throw ValidationError("token distribution has zero mass");
    for (double& p : probs) p /= total;
    TokenDistribution d;
    d.probs_ = std::move(probs);
    return d;
  }

  // First `top_k` candidates of an observation (0 = all of them).
  static TokenDistribution from_candidates(std::span<const TokenCandidate> candidates, std::size_t top_k = 0) {
    const std::size_t n = (top_k == 0) ? candidates.size() : std::min(top_k, candidates.size());
    std::vector<double> probs;
    probs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) probs.push_back(candidates[i].probability);
    return from_probabilities(std::move(probs));
  }

  std::span<const double> probabilities() const { return probs_; }
  std::size_t size() const { return probs_.size(); }

 private:
  TokenDistribution() = default;
  std::vector<double> probs_;
};

inline double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

// A single candidate is fully certain (H = 0). A uniform distribution returns
// exactly 1 instead of a value rounded from log arithmetic.
inline double normalized_entropy(const TokenDistribution& dist) {
  const auto p = dist.probabilities();
  if (p.empty()) throw ValidationError("token distribution is empty");
  if (p.size() == 1) return 0.0;
  if (std::all_of(p.begin(), p.end(), [&](double v) { return v == p.front(); })) return 1.0;
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return clamp_unit(h / std::log(static_cast<double>(p.size())));
}

struct AnswerConfidence {
  double value = 0.0;
  std::size_t token_count = 0;

  bool operator==(const AnswerConfidence&) const = default;
};

inline AnswerConfidence answer_confidence(std::span<const TokenDistribution> positions) {
  if (positions.empty()) throw ValidationError("answer confidence needs at least one answer token");
  double sum = 0.0;
  for (const auto& d : positions) sum += normalized_entropy(d);
  return {clamp_unit(1.0 - sum / static_cast<double>(positions.size())), positions.size()};
}

struct WindowConfig {
  std::size_t k = 5;
  double alpha = 0.7;
  double tau = 0.8;

  void validate() const {
    if (k < 1) throw ValidationError("window: k must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("window: alpha must lie in [0, 1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("window: tau must lie in [0, 1]");
  }

  bool operator==(const WindowConfig&) const = default;
};

// (a_t, c_t) for one step. Both are absent when no answer could be parsed;
// such a step still takes a window slot.
struct StepEvidence {
  std::size_t step_index = 0;
  std::optional<CanonicalAnswer> answer;
  std::optional<AnswerConfidence> confidence;

  bool has_answer() const { return answer.has_value(); }
  bool operator==(const StepEvidence&) const = default;
};

inline StepEvidence make_evidence(std::size_t step, std::optional<CanonicalAnswer> answer,
                                  std::optional<AnswerConfidence> confidence) {
  if (answer.has_value() != confidence.has_value()) {
    throw ValidationError("step evidence: answer and confidence must be both present or both absent");
  }
  return {step, std::move(answer), confidence};
}

inline std::size_t count_answer(std::span<const StepEvidence> window, const CanonicalAnswer& answer) {
  return static_cast<std::size_t>(std::count_if(window.begin(), window.end(), [&](const StepEvidence& e) {
    return e.answer && *e.answer == answer;
  }));
}

// The denominator is k even while the window is still filling.
inline double acs(std::span<const StepEvidence> window, const CanonicalAnswer& answer, std::size_t k) {
  if (k < 1) throw ValidationError("acs: k must be >= 1");
  if (window.size() > k) throw ValidationError("acs: window longer than k");
  const std::size_t n = count_answer(window, answer);
  if (n == 0) throw ValidationError("acs: answer '" + answer + "' is not in the window");
  return static_cast<double>(n) / static_cast<double>(k);
}

inline double cts(std::span<const StepEvidence> window, const CanonicalAnswer& answer) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : window) {
    if (e.answer && *e.answer == answer) {
      sum += e.confidence->value;
      ++n;
    }
  }
  if (n == 0) throw ValidationError("cts: answer '" + answer + "' is not in the window");
  return clamp_unit(sum / static_cast<double>(n));
}

struct CandidateScore {
  CanonicalAnswer answer;
  std::size_t count = 0;
  double acs = 0.0;
  double cts = 0.0;
  double s = 0.0;

  bool operator==(const CandidateScore&) const = default;
};

struct StabilityReport {
  std::vector<CandidateScore> candidates;  // in order of first appearance
  std::optional<CanonicalAnswer> selected;
  bool exit = false;

  const CandidateScore* selected_entry() const {
    if (!selected) return nullptr;
    for (const auto& c : candidates) {
      if (c.answer == *selected) return &c;
    }
    return nullptr;
  }

  std::optional<double> selected_score() const {
    const auto* e = selected_entry();
    return e ? std::optional<double>(e->s) : std::nullopt;
  }

  bool operator==(const StabilityReport&) const = default;
};

// Ties in S go to the candidate induced most recently.
inline StabilityReport stability(std::span<const StepEvidence> window, const WindowConfig& config) {
  config.validate();
  if (window.size() > config.k) throw ValidationError("stability: window longer than k");
  StabilityReport report;
  std::vector<std::size_t> last_seen;
  for (std::size_t i = 0; i < window.size(); ++i) {
    const auto& e = window[i];
    if (!e.answer) continue;
    auto it = std::find_if(report.candidates.begin(), report.candidates.end(),
                           [&](const CandidateScore& c) { return c.answer == *e.answer; });
    if (it == report.candidates.end()) {
      report.candidates.push_back({*e.answer});
      last_seen.push_back(i);
    } else {
      last_seen[static_cast<std::size_t>(it - report.candidates.begin())] = i;
    }
  }
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < report.candidates.size(); ++i) {
    auto& c = report.candidates[i];
    c.count = count_answer(window, c.answer);
    c.acs = acs(window, c.answer, config.k);
    c.cts = cts(window, c.answer);
    c.s = clamp_unit(config.alpha * c.acs + (1.0 - config.alpha) * c.cts);
    if (!best || c.s > report.candidates[*best].s ||
        (c.s == report.candidates[*best].s && last_seen[i] > last_seen[*best])) {
      best = i;
    }
  }
  if (best) {
    report.selected = report.candidates[*best].answer;
    report.exit = report.candidates[*best].s >= config.tau;
  }
  return report;
}

}  // namespace trace_exit

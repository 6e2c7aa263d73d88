// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace trace_exit {

struct TokenCandidate {
  std::string text;
  double probability = 0.0;

  bool operator==(const TokenCandidate&) const = default;
};

// One generated token plus its top-K alternatives, most probable first.
struct TokenObservation {
  std::string text;
  std::vector<TokenCandidate> top_candidates;
  std::size_t position = 0;

  bool operator==(const TokenObservation&) const = default;
};

// Logprobs below this are clamped so no candidate ends up with probability 0.
inline constexpr double kLogprobFloor = -30.0;

inline double probability_from_logprob(double logprob) {
  return std::exp(std::max(logprob, kLogprobFloor));
}

// Restores the TokenObservation invariants: the chosen token is present,
// candidates are sorted by descending probability and each lies in (0, 1].
// `chosen_probability` is used when the chosen token is missing from the list.
inline void normalize_candidates(TokenObservation& token, double chosen_probability) {
  auto& cands = token.top_candidates;
  const bool has_chosen = std::any_of(cands.begin(), cands.end(),
                                      [&](const TokenCandidate& c) { return c.text == token.text; });
  if (!has_chosen) cands.push_back({token.text, chosen_probability});
  const double floor = std::exp(kLogprobFloor);
  for (auto& c : cands) c.probability = std::clamp(c.probability, floor, 1.0);
  std::stable_sort(cands.begin(), cands.end(), [](const TokenCandidate& a, const TokenCandidate& b) {
    return a.probability > b.probability;
  });
}

}  // namespace trace_exit

// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the unit tests: fixture paths, scripted traces built in
// memory, and brute-force reference implementations.

#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "trace_exit/controller.hpp"
#include "trace_exit/replay.hpp"
#include "trace_exit/scoring.hpp"
#include "trace_exit/stepper.hpp"

namespace te_test {

using namespace trace_exit;

inline std::string fixture(const std::string& rel) { return std::string(TRACE_EXIT_FIXTURES) + "/" + rel; }

inline TokenObservation tok(const std::string& text, double p = 0.9) {
  TokenObservation t;
  t.text = text;
  t.top_candidates.push_back({text, p});
  if (p < 1.0) t.top_candidates.push_back({text + "~", 1.0 - p});
  return t;
}

// Two-candidate top probability whose normalized entropy is 1 - confidence.
inline double top_probability(double confidence) {
  const double target = 1.0 - confidence;
  if (target >= 1.0) return 0.5;
  auto h = [](double p) {
    double s = 0.0;
    for (double x : {p, 1.0 - p}) {
      if (x > 0) s -= x * std::log(x);
    }
    return s / std::log(2.0);
  };
  double lo = 0.5, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = (lo + hi) / 2;
    (h(mid) > target ? lo : hi) = mid;
  }
  return (lo + hi) / 2;
}

struct ScriptedStep {
  std::string text;
  std::optional<std::string> answer;  // nullopt scripts an unparseable reply
  double confidence = 0.9;
};

// Splits text into pieces of `width` bytes.
inline std::vector<std::string> chop(const std::string& text, std::size_t width) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); i += width) out.push_back(text.substr(i, width));
  return out;
}

inline InductionResponse scripted_reply(const std::optional<std::string>& answer, double confidence) {
  InductionResponse r;
  if (!answer) {
    r.text = "not sure yet";
    r.tokens = {tok("not"), tok(" sure"), tok(" yet")};
    return r;
  }
  const double p = top_probability(confidence);
  r.text = *answer + "}";
  TokenObservation a;
  a.text = *answer;
  a.top_candidates = {{*answer, p}, {*answer + "0", 1.0 - p}};
  r.tokens = {a, tok("}", 0.99)};
  for (std::size_t i = 0; i < r.tokens.size(); ++i) r.tokens[i].position = i;
  return r;
}

// Trace whose steps are the given texts (each step after the first should
// start with a marker of the default profile). Tokens are `width` bytes wide.
inline ReplayTrace make_trace(const std::vector<ScriptedStep>& steps, std::size_t width = 4,
                              std::optional<std::string> gold = std::nullopt) {
  ReplayTrace t;
  t.question = "scripted question";
  t.gold_answer = std::move(gold);
  std::string text;
  for (const auto& s : steps) text += s.text;
  for (const auto& piece : chop(text, width)) {
    auto o = tok(piece, 0.8);
    o.position = t.main_stream.size();
    t.main_stream.push_back(o);
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    t.induction_responses[i + 1] = scripted_reply(steps[i].answer, steps[i].confidence);
  }
  return t;
}

// Step texts for a scripted answer sequence: "Start ... ", "\nWait, ..." etc.
inline std::vector<ScriptedStep> steps_for(const std::vector<std::optional<std::string>>& answers,
                                           const std::vector<double>& confidences) {
  static const char* leads[] = {"\nWait, ", "\nBut ", "\nAlternatively, ", "\nLet me think. "};
  std::vector<ScriptedStep> out;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    std::string text = i == 0 ? std::string("Start with the setup. ") : std::string(leads[i % 4]);
    text += "step " + std::to_string(i + 1) + " reasoning goes here and ends. ";
    out.push_back({text, answers[i], confidences[i]});
  }
  return out;
}

// Reference scanner: every position, every marker, straight from the rules.
inline std::vector<std::pair<std::size_t, std::string>> brute_force_boundaries(const std::string& text,
                                                                               const SegmenterConfig& cfg) {
  auto word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || (c & 0x80); };
  std::vector<std::pair<std::size_t, std::string>> out;
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    for (const auto& m : cfg.stop_tokens) {
      if (text.substr(pos, m.size()) != m) continue;
      if (cfg.whole_word) {
        const bool left_glued = word(m.front()) && pos > 0 && word(text[pos - 1]);
        const bool right_glued = word(m.back()) && pos + m.size() < text.size() && word(text[pos + m.size()]);
        if (left_glued || right_glued) continue;
      }
      out.emplace_back(pos, m);
      break;
    }
    if (out.size() >= cfg.match_limit) break;
  }
  return out;
}

// Reference scores: group by answer with a map, recompute each quantity directly.
struct RefScore {
  double acs, cts, s;
  std::size_t count;
};

inline std::map<std::string, RefScore> brute_force_scores(const std::vector<StepEvidence>& window,
                                                          const WindowConfig& cfg) {
  std::map<std::string, std::vector<double>> groups;
  for (const auto& e : window) {
    if (e.answer) groups[*e.answer].push_back(e.confidence->value);
  }
  std::map<std::string, RefScore> out;
  for (const auto& [a, cs] : groups) {
    long double sum = 0;
    for (double c : cs) sum += c;
    const double acs_v = static_cast<double>(cs.size()) / static_cast<double>(cfg.k);
    const double cts_v = static_cast<double>(sum / cs.size());
    out[a] = {acs_v, cts_v, cfg.alpha * acs_v + (1 - cfg.alpha) * cts_v, cs.size()};
  }
  return out;
}

inline double brute_force_entropy(const std::vector<double>& raw) {
  long double total = 0;
  for (double p : raw) total += p;
  if (raw.size() == 1) return 0.0;
  long double h = 0;
  for (double p : raw) {
    const long double q = p / total;
    if (q > 0) h -= q * std::log2(q);
  }
  return static_cast<double>(h / std::log2(static_cast<long double>(raw.size())));
}

}  // namespace te_test

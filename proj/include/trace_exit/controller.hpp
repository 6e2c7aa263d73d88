// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Session loop. Each completed reasoning step is followed by one answer
// induction; the induced (answer, confidence) pair enters a sliding window of
// the last k steps and the stop rule of the active policy is evaluated:
//
//   trace         S(a*) >= tau over the window
//   single_step   c_t >= tau for the current step alone
//   oracle        a_t equals the gold answer (replay only, upper bound)
//   vanilla       never; the stream runs to its natural end, no inductions
//   fixed_budget  stream cut after N tokens, one induction at the cut
//
// When no rule fires the last induced answer is returned. The upstream stream
// is cancelled as soon as the session decides to stop; tokens that arrived
// after the last billed step boundary are reported as unbilled.

#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trace_exit/driver.hpp"
#include "trace_exit/errors.hpp"
#include "trace_exit/induction.hpp"
#include "trace_exit/scoring.hpp"
#include "trace_exit/stepper.hpp"

namespace trace_exit {

enum class Policy { trace, single_step, vanilla, fixed_budget, oracle };
enum class ExitReason { threshold, max_steps, stream_end, token_cap };
// What to return when no stop rule fires before the session ends.
enum class Fallback { last_induced, best_score };

inline std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::trace: return "trace";
    case Policy::single_step: return "single_step";
    case Policy::vanilla: return "vanilla";
    case Policy::fixed_budget: return "fixed_budget";
    case Policy::oracle: return "oracle";
  }
  return "?";
}

inline std::optional<Policy> parse_policy(std::string_view s) {
  for (auto p : {Policy::trace, Policy::single_step, Policy::vanilla, Policy::fixed_budget, Policy::oracle}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

inline std::string_view to_string(ExitReason r) {
  switch (r) {
    case ExitReason::threshold: return "threshold";
    case ExitReason::max_steps: return "max_steps";
    case ExitReason::stream_end: return "stream_end";
    case ExitReason::token_cap: return "token_cap";
  }
  return "?";
}

inline std::string_view to_string(Fallback f) { return f == Fallback::last_induced ? "last_induced" : "best_score"; }

inline std::optional<Fallback> parse_fallback(std::string_view s) {
  if (s == "last_induced") return Fallback::last_induced;
  if (s == "best_score") return Fallback::best_score;
  return std::nullopt;
}

// Decides whether a predicted answer matches the gold one.
using AnswerJudge = std::function<bool(const CanonicalAnswer& predicted, const CanonicalAnswer& gold)>;

inline bool canonical_equal(const CanonicalAnswer& predicted, const CanonicalAnswer& gold) {
  return canonicalize(predicted) == canonicalize(gold);
}

struct SessionConfig {
  WindowConfig window;
  std::string segmenter_profile = "default";
  SegmenterConfig segmenter = default_segmenter_profile();
  InductionPrompt prompt;
  std::size_t max_steps = 64;
  std::size_t max_total_tokens = 32768;
  Policy policy = Policy::trace;
  Fallback fallback = Fallback::last_induced;
  std::size_t top_k = 20;
  std::size_t fixed_budget_tokens = 4096;

  void validate() const {
    window.validate();
    segmenter.validate();
    prompt.validate();
    if (max_steps < 1) throw ValidationError("session: max_steps must be >= 1");
    if (max_total_tokens < 1) throw ValidationError("session: max_total_tokens must be >= 1");
    if (policy == Policy::fixed_budget && fixed_budget_tokens < 1) {
      throw ValidationError("session: fixed_budget_tokens must be >= 1");
    }
  }
};

struct ExitDecision {
  std::size_t step_index = 0;
  bool exited_early = false;
  std::optional<CanonicalAnswer> final_answer;
  std::optional<double> trigger_score;
  ExitReason reason = ExitReason::stream_end;
};

struct StepRecord {
  ReasoningStep step;
  std::optional<StepEvidence> evidence;    // absent when the policy does not induce
  std::optional<StabilityReport> report;   // one per induced step
  std::string induction_text;
  std::size_t induction_tokens = 0;
};

struct SessionRecord {
  SessionConfig config;
  std::string question;
  std::optional<CanonicalAnswer> gold;
  std::string driver;
  std::vector<StepRecord> steps;
  ExitDecision decision;
  std::size_t reasoning_tokens = 0;
  std::size_t induction_tokens = 0;
  std::size_t unbilled_tokens = 0;  // received after the billed boundary
  std::optional<std::string> error;
  double duration_ms = 0.0;

  std::size_t total_tokens() const { return reasoning_tokens + induction_tokens; }
};

// Pulls tokens from a driver through a Segmenter and hands out completed steps.
class StepSource {
 public:
  StepSource(ModelDriver& driver, const SegmenterConfig& config, std::size_t token_cap)
      : driver_(driver), segmenter_(config), token_cap_(token_cap) {}

  std::optional<ReasoningStep> next() {
    while (pending_.empty()) {
      if (finished_) return std::nullopt;
      pull();
    }
    ReasoningStep s = std::move(pending_.front());
    pending_.pop_front();
    return s;
  }

  // Reasoning text from the start of the stream through the end of `step`.
  std::string reasoning_through(const ReasoningStep& step) const {
    return segmenter_.text().substr(0, step.char_range.end);
  }

  void stop() {
    if (!stopped_) driver_.cancel();
    stopped_ = true;
  }

  const Segmenter& segmenter() const { return segmenter_; }
  std::size_t tokens_received() const { return received_; }
  bool hit_token_cap() const { return hit_cap_; }
  std::string full_text() const { return segmenter_.text().substr(0, segmenter_.effective_length()); }

 private:
  void pull() {
    auto tok = driver_.next_token();
    if (!tok) {
      finish();
      return;
    }
    ++received_;
    segmenter_.feed(*tok);
    for (auto& s : segmenter_.drain_completed_steps()) pending_.push_back(std::move(s));
    if (segmenter_.truncated()) {
      stop();
      finish();
    } else if (received_ >= token_cap_) {
      hit_cap_ = true;
      stop();
      finish();
    }
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    const std::size_t drained = segmenter_.drained_step_count();
    for (auto& s : segmenter_.finalize()) {
      if (s.index > drained) pending_.push_back(std::move(s));
    }
  }

  ModelDriver& driver_;
  Segmenter segmenter_;
  std::size_t token_cap_;
  std::deque<ReasoningStep> pending_;
  std::size_t received_ = 0;
  bool finished_ = false;
  bool stopped_ = false;
  bool hit_cap_ = false;
};

namespace detail {

struct Verdict {
  bool stop = false;
  std::optional<CanonicalAnswer> answer;
  std::optional<double> score;
};

using StopRule = std::function<Verdict(const StepEvidence&, const StabilityReport&)>;

inline std::optional<CanonicalAnswer> fallback_answer(const std::vector<StepRecord>& steps, Fallback mode) {
  if (mode == Fallback::best_score) {
    const StabilityReport* best = nullptr;
    for (const auto& s : steps) {
      if (!s.report || !s.report->selected) continue;
      if (!best || *s.report->selected_score() >= *best->selected_score()) best = &*s.report;
    }
    if (best) return best->selected;
  }
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    if (it->evidence && it->evidence->answer) return it->evidence->answer;
  }
  return std::nullopt;
}

class SessionClock {
 public:
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void settle_tokens(SessionRecord& rec, const StepSource& source) {
  rec.reasoning_tokens = 0;
  rec.induction_tokens = 0;
  for (const auto& s : rec.steps) {
    rec.reasoning_tokens += s.step.token_count;
    rec.induction_tokens += s.induction_tokens;
  }
  rec.unbilled_tokens = source.tokens_received() - rec.reasoning_tokens;
}

// Shared loop for every policy that induces at each step. `rule` == nullptr
// runs to the end without stopping early.
inline SessionRecord run_inducing_loop(ModelDriver& driver, const std::string& question, const SessionConfig& config,
                                       const StopRule& rule) {
  config.validate();
  SessionClock clock;
  SessionRecord rec;
  rec.config = config;
  rec.question = question;
  rec.driver = driver.name();

  StepSource source(driver, config.segmenter, config.max_total_tokens);
  std::deque<StepEvidence> window;
  bool done = false;
  try {
    driver.start(question);
    for (std::size_t t = 1; t <= config.max_steps && !done; ++t) {
      auto step = source.next();
      if (!step) {
        rec.decision.reason = source.hit_token_cap() ? ExitReason::token_cap : ExitReason::stream_end;
        break;
      }
      const auto induced = induce(driver, t, question, source.reasoning_through(*step), config.prompt, config.top_k);
      StepRecord sr;
      sr.step = std::move(*step);
      sr.evidence = evidence_from(t, induced);
      sr.induction_text = induced.raw_text;
      sr.induction_tokens = induced.token_cost;

      window.push_back(*sr.evidence);
      if (window.size() > config.window.k) window.pop_front();
      const std::vector<StepEvidence> snapshot(window.begin(), window.end());
      sr.report = stability(snapshot, config.window);

      rec.decision.step_index = t;
      if (rule) {
        const Verdict v = rule(*sr.evidence, *sr.report);
        if (v.stop) {
          rec.decision.exited_early = true;
          rec.decision.final_answer = v.answer;
          rec.decision.trigger_score = v.score;
          rec.decision.reason = ExitReason::threshold;
          done = true;
        }
      }
      rec.steps.push_back(std::move(sr));
      if (!done && t == config.max_steps) {
        rec.decision.reason = ExitReason::max_steps;
        done = true;
      }
    }
    if (done) source.stop();
  } catch (const ConfigError&) {
    source.stop();
    throw;
  } catch (const Error& e) {
    rec.error = e.what();
    source.stop();
    rec.decision.exited_early = false;
    rec.decision.trigger_score.reset();
    rec.decision.reason = ExitReason::stream_end;
  }
  if (!rec.decision.exited_early) rec.decision.final_answer = fallback_answer(rec.steps, config.fallback);
  settle_tokens(rec, source);
  rec.duration_ms = clock.elapsed_ms();
  return rec;
}

inline void require_policy(const SessionConfig& config, Policy expected) {
  if (config.policy != expected) {
    throw UsageError("session config has policy '" + std::string(to_string(config.policy)) + "', expected '" +
                     std::string(to_string(expected)) + "'");
  }
}

}  // namespace detail

inline SessionRecord run_trace(ModelDriver& driver, const std::string& question, const SessionConfig& config) {
  detail::require_policy(config, Policy::trace);
  return detail::run_inducing_loop(driver, question, config,
                                   [](const StepEvidence&, const StabilityReport& report) -> detail::Verdict {
                                     if (!report.exit) return {};
                                     return {true, report.selected, report.selected_score()};
                                   });
}

inline SessionRecord run_single_step(ModelDriver& driver, const std::string& question, const SessionConfig& config) {
  detail::require_policy(config, Policy::single_step);
  const double tau = config.window.tau;
  return detail::run_inducing_loop(driver, question, config,
                                   [tau](const StepEvidence& ev, const StabilityReport&) -> detail::Verdict {
                                     if (!ev.confidence || ev.confidence->value < tau) return {};
                                     return {true, ev.answer, ev.confidence->value};
                                   });
}

// Stops at the first step whose induced answer is judged equal to `gold`.
inline SessionRecord run_oracle(ModelDriver& driver, const std::string& question, const SessionConfig& config,
                                const CanonicalAnswer& gold, const AnswerJudge& judge = canonical_equal) {
  detail::require_policy(config, Policy::oracle);
  auto rec = detail::run_inducing_loop(driver, question, config,
                                       [&](const StepEvidence& ev, const StabilityReport&) -> detail::Verdict {
                                         if (!ev.answer || !judge(*ev.answer, gold)) return {};
                                         return {true, ev.answer, 1.0};
                                       });
  rec.gold = gold;
  return rec;
}

// Induces at every step up to max_steps without ever stopping early. Sweeps
// re-score this record offline instead of querying the model again.
inline SessionRecord collect_evidence(ModelDriver& driver, const std::string& question, const SessionConfig& config) {
  return detail::run_inducing_loop(driver, question, config, nullptr);
}

inline SessionRecord run_vanilla(ModelDriver& driver, const std::string& question, const SessionConfig& config) {
  detail::require_policy(config, Policy::vanilla);
  config.validate();
  detail::SessionClock clock;
  SessionRecord rec;
  rec.config = config;
  rec.question = question;
  rec.driver = driver.name();
  StepSource source(driver, config.segmenter, config.max_total_tokens);
  try {
    driver.start(question);
    while (auto step = source.next()) rec.steps.emplace_back().step = std::move(*step);
  } catch (const ConfigError&) {
    source.stop();
    throw;
  } catch (const Error& e) {
    rec.error = e.what();
    source.stop();
  }
  rec.decision.step_index = rec.steps.size();
  rec.decision.reason = source.hit_token_cap() ? ExitReason::token_cap : ExitReason::stream_end;
  rec.decision.final_answer = parse_answer(source.full_text());
  detail::settle_tokens(rec, source);
  rec.duration_ms = clock.elapsed_ms();
  return rec;
}

// Cuts the main stream after fixed_budget_tokens tokens and induces once on
// whatever reasoning was produced by then.
inline SessionRecord run_fixed_budget(ModelDriver& driver, const std::string& question, const SessionConfig& config) {
  detail::require_policy(config, Policy::fixed_budget);
  config.validate();
  detail::SessionClock clock;
  SessionRecord rec;
  rec.config = config;
  rec.question = question;
  rec.driver = driver.name();
  StepSource source(driver, config.segmenter, std::min(config.fixed_budget_tokens, config.max_total_tokens));
  try {
    driver.start(question);
    while (auto step = source.next()) rec.steps.emplace_back().step = std::move(*step);
    if (!rec.steps.empty()) {
      auto& last = rec.steps.back();
      const auto induced = induce(driver, last.step.index, question, source.reasoning_through(last.step),
                                  config.prompt, config.top_k);
      last.evidence = evidence_from(last.step.index, induced);
      last.induction_text = induced.raw_text;
      last.induction_tokens = induced.token_cost;
      rec.decision.final_answer = last.evidence->answer;
    }
  } catch (const ConfigError&) {
    source.stop();
    throw;
  } catch (const Error& e) {
    rec.error = e.what();
    source.stop();
  }
  rec.decision.step_index = rec.steps.size();
  rec.decision.reason = source.hit_token_cap() ? ExitReason::token_cap : ExitReason::stream_end;
  detail::settle_tokens(rec, source);
  rec.duration_ms = clock.elapsed_ms();
  return rec;
}

// Runs whichever policy the config names. `gold` is required for oracle.
inline SessionRecord run_session(ModelDriver& driver, const std::string& question, const SessionConfig& config,
                                 const std::optional<CanonicalAnswer>& gold = std::nullopt,
                                 const AnswerJudge& judge = canonical_equal) {
  SessionRecord rec;
  switch (config.policy) {
    case Policy::trace: rec = run_trace(driver, question, config); break;
    case Policy::single_step: rec = run_single_step(driver, question, config); break;
    case Policy::vanilla: rec = run_vanilla(driver, question, config); break;
    case Policy::fixed_budget: rec = run_fixed_budget(driver, question, config); break;
    case Policy::oracle:
      if (!gold) throw UsageError("oracle policy needs a gold answer");
      return run_oracle(driver, question, config, *gold, judge);
  }
  rec.gold = gold;
  return rec;
}

}  // namespace trace_exit

// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// JSON forms of SessionConfig and SessionRecord. Field names are stable; the
// schema is documented in docs/session-record.md.

#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "trace_exit/controller.hpp"

namespace trace_exit {

inline constexpr std::string_view kSessionSchema = "trace-exit/session-record/v1";

namespace detail {

using ojson = nlohmann::ordered_json;

template <class T>
ojson optional_json(const std::optional<T>& v) {
  return v ? ojson(*v) : ojson(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const SegmenterConfig& c) {
  nlohmann::ordered_json j;
  j["stop_tokens"] = c.stop_tokens;
  j["scan_interval_tokens"] = c.scan_interval_tokens;
  j["match_limit"] = c.match_limit;
  j["overlap_chars"] = c.effective_overlap();
  j["whole_word"] = c.whole_word;
  return j;
}

inline nlohmann::ordered_json to_json(const SessionConfig& c) {
  nlohmann::ordered_json j;
  j["policy"] = to_string(c.policy);
  j["window"] = {{"k", c.window.k}, {"alpha", c.window.alpha}, {"tau", c.window.tau}};
  j["segmenter_profile"] = c.segmenter_profile;
  j["segmenter"] = to_json(c.segmenter);
  j["induction"] = {{"template", c.prompt.template_text},
                    {"max_answer_tokens", c.prompt.max_answer_tokens},
                    {"decoding", "greedy"}};
  j["max_steps"] = c.max_steps;
  j["max_total_tokens"] = c.max_total_tokens;
  j["fallback"] = to_string(c.fallback);
  j["top_k"] = c.top_k;
  j["fixed_budget_tokens"] = c.fixed_budget_tokens;
  return j;
}

inline nlohmann::ordered_json to_json(const StabilityReport& r) {
  nlohmann::ordered_json j;
  j["candidates"] = nlohmann::ordered_json::array();
  for (const auto& c : r.candidates) {
    j["candidates"].push_back({{"answer", c.answer}, {"count", c.count}, {"acs", c.acs}, {"cts", c.cts}, {"s", c.s}});
  }
  j["selected"] = detail::optional_json(r.selected);
  j["selected_score"] = detail::optional_json(r.selected_score());
  j["exit"] = r.exit;
  return j;
}

inline nlohmann::ordered_json to_json(const StepRecord& s) {
  nlohmann::ordered_json j;
  j["index"] = s.step.index;
  j["char_begin"] = s.step.char_range.begin;
  j["char_end"] = s.step.char_range.end;
  j["marker"] = s.step.marker;
  j["token_count"] = s.step.token_count;
  j["text"] = s.step.text;
  if (s.evidence) {
    nlohmann::ordered_json ev;
    ev["answer"] = detail::optional_json(s.evidence->answer);
    ev["confidence"] = s.evidence->confidence ? nlohmann::ordered_json(s.evidence->confidence->value)
                                              : nlohmann::ordered_json(nullptr);
    ev["answer_tokens"] = s.evidence->confidence ? s.evidence->confidence->token_count : 0;
    ev["raw"] = s.induction_text;
    ev["token_cost"] = s.induction_tokens;
    j["induction"] = ev;
  } else {
    j["induction"] = nullptr;
  }
  j["report"] = s.report ? to_json(*s.report) : nlohmann::ordered_json(nullptr);
  return j;
}

// `include_timing` = false drops the wall-clock field, which is the only
// nondeterministic part of a record.
inline nlohmann::ordered_json to_json(const SessionRecord& r, bool include_timing = true) {
  nlohmann::ordered_json j;
  j["schema"] = kSessionSchema;
  j["config"] = to_json(r.config);
  j["driver"] = r.driver;
  j["question"] = r.question;
  j["gold"] = detail::optional_json(r.gold);
  j["steps"] = nlohmann::ordered_json::array();
  for (const auto& s : r.steps) j["steps"].push_back(to_json(s));
  j["decision"] = {{"step_index", r.decision.step_index},
                   {"exited_early", r.decision.exited_early},
                   {"final_answer", detail::optional_json(r.decision.final_answer)},
                   {"trigger_score", detail::optional_json(r.decision.trigger_score)},
                   {"reason", to_string(r.decision.reason)}};
  j["reasoning_tokens"] = r.reasoning_tokens;
  j["induction_tokens"] = r.induction_tokens;
  j["total_tokens"] = r.total_tokens();
  j["unbilled_tokens"] = r.unbilled_tokens;
  j["error"] = detail::optional_json(r.error);
  if (include_timing) j["duration_ms"] = r.duration_ms;
  return j;
}

}  // namespace trace_exit

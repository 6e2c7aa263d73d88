// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Answer induction: ask the model for its current final answer given the
// partial reasoning, parse the reply and canonicalize it so answers from
// different steps can be compared for equality.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trace_exit/driver.hpp"
#include "trace_exit/errors.hpp"
#include "trace_exit/scoring.hpp"

namespace trace_exit {

inline constexpr std::string_view kReasoningSlot = "{reasoning}";
inline constexpr std::string_view kBoxOpen = "\\boxed{";

struct InductionPrompt {
  std::string template_text = "{reasoning}\n\nWe can get the question's Final Answer: \\boxed{";
  std::size_t max_answer_tokens = 32;

  void validate() const {
    const auto first = template_text.find(kReasoningSlot);
    if (first == std::string::npos || template_text.find(kReasoningSlot, first + 1) != std::string::npos) {
      throw ValidationError("induction template must contain exactly one {reasoning} slot");
    }
    if (max_answer_tokens < 1) throw ValidationError("induction: max_answer_tokens must be >= 1");
  }

  // True when the template leaves a \boxed{ open for the model to close.
  bool opens_box() const {
    return template_text.size() >= kBoxOpen.size() &&
           std::string_view(template_text).substr(template_text.size() - kBoxOpen.size()) == kBoxOpen;
  }

  std::string render(std::string_view reasoning) const {
    std::string out = template_text;
    out.replace(out.find(kReasoningSlot), kReasoningSlot.size(), reasoning);
    return out;
  }

  bool operator==(const InductionPrompt&) const = default;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::string_view trim_view(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Index of the brace closing the group opened at `open` (text[open] == '{').
inline std::optional<std::size_t> matching_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < text.size(); ++i) {
    if (text[i] == '\\' && i + 1 < text.size()) {
      ++i;  // escaped character, e.g. \{ or \}
      continue;
    }
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return i;
  }
  return std::nullopt;
}

// Position of '{' following a command at `cmd_end`, skipping spaces.
inline std::optional<std::size_t> group_after(std::string_view text, std::size_t cmd_end) {
  std::size_t i = cmd_end;
  while (i < text.size() && is_space(text[i])) ++i;
  if (i < text.size() && text[i] == '{') return i;
  return std::nullopt;
}

inline bool is_plain_number(std::string_view s) {
  if (!s.empty() && (s.front() == '+' || s.front() == '-')) s.remove_prefix(1);
  if (s.empty()) return false;
  std::size_t digits = 0, dots = 0;
  for (char c : s) {
    if (is_digit(c)) ++digits;
    else if (c == '.') ++dots;
    else return false;
  }
  return digits > 0 && dots <= 1 && s.back() != '.';
}

// "+007" -> "7", ".5" -> "0.5", "-00.25" -> "-0.25".
inline std::string normalize_number(std::string_view s) {
  std::string sign;
  if (s.front() == '+') s.remove_prefix(1);
  else if (s.front() == '-') {
    sign = "-";
    s.remove_prefix(1);
  }
  const auto dot = s.find('.');
  std::string_view whole = s.substr(0, dot);
  std::string frac = dot == std::string_view::npos ? "" : std::string(s.substr(dot));
  while (whole.size() > 1 && whole.front() == '0') whole.remove_prefix(1);
  std::string out = whole.empty() ? "0" : std::string(whole);
  return sign + out + frac;
}

inline bool needs_parens(std::string_view s) {
  return s.find_first_of("+-*/ ") != std::string_view::npos && !(s.size() > 1 && s.front() == '-' && is_plain_number(s));
}

// \frac{a}{b}, \dfrac{a}{b}, \tfrac{a}{b} -> a/b, innermost first.
inline std::string rewrite_fractions(std::string s) {
  static constexpr std::string_view kCommands[] = {"\\dfrac", "\\tfrac", "\\frac"};
  for (bool changed = true; changed;) {
    changed = false;
    for (auto cmd : kCommands) {
      for (std::size_t pos = s.rfind(cmd); pos != std::string::npos; pos = pos == 0 ? std::string::npos : s.rfind(cmd, pos - 1)) {
        auto num_open = group_after(s, pos + cmd.size());
        if (!num_open) continue;
        auto num_close = matching_brace(s, *num_open);
        if (!num_close) continue;
        auto den_open = group_after(s, *num_close + 1);
        if (!den_open) continue;
        auto den_close = matching_brace(s, *den_open);
        if (!den_close) continue;
        std::string num(trim_view(std::string_view(s).substr(*num_open + 1, *num_close - *num_open - 1)));
        std::string den(trim_view(std::string_view(s).substr(*den_open + 1, *den_close - *den_open - 1)));
        if (needs_parens(num)) num = "(" + num + ")";
        if (needs_parens(den)) den = "(" + den + ")";
        s.replace(pos, *den_close + 1 - pos, num + "/" + den);
        changed = true;
        break;
      }
      if (changed) break;
    }
  }
  return s;
}

// Removes one enclosing wrapper: \boxed{..}, \text{..}, $..$, $$..$$, \(..\), \[..\].
inline bool strip_wrapper(std::string& s) {
  static constexpr std::string_view kGroupCommands[] = {"\\boxed", "\\fbox", "\\text", "\\mathrm", "\\textbf", "\\mathbf"};
  for (auto cmd : kGroupCommands) {
    if (s.rfind(cmd, 0) != 0) continue;
    auto open = group_after(s, cmd.size());
    if (!open) continue;
    auto close = matching_brace(s, *open);
    if (close && *close + 1 == s.size()) {
      s = std::string(trim_view(std::string_view(s).substr(*open + 1, *close - *open - 1)));
      return true;
    }
  }
  static constexpr std::pair<std::string_view, std::string_view> kDelims[] = {
      {"$$", "$$"}, {"$", "$"}, {"\\(", "\\)"}, {"\\[", "\\]"}};
  for (auto [open, close] : kDelims) {
    if (s.size() >= open.size() + close.size() && s.rfind(open, 0) == 0 &&
        std::string_view(s).substr(s.size() - close.size()) == close) {
      s = std::string(trim_view(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size())));
      return true;
    }
  }
  return false;
}

inline std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

inline std::string canonicalize_once(std::string s) {
  s = std::string(trim_view(s));
  while (strip_wrapper(s)) {
  }
  while (!s.empty() && std::string_view(".,;:!").find(s.back()) != std::string_view::npos) s.pop_back();
  s = rewrite_fractions(std::move(s));
  for (std::string_view spacing : {"\\left", "\\right", "\\,", "\\!", "\\;"}) {
    for (auto pos = s.find(spacing); pos != std::string::npos; pos = s.find(spacing, pos)) {
      // \left( and \right) drop the command but keep the delimiter; \leftarrow stays.
      const std::size_t after = pos + spacing.size();
      if (std::isalpha(static_cast<unsigned char>(spacing.back())) && after < s.size() &&
          std::isalpha(static_cast<unsigned char>(s[after]))) {
        pos = after;
        continue;
      }
      s.erase(pos, spacing.size());
    }
  }
  s = collapse_spaces(s);

  // Multiple-choice letter, optionally parenthesized: "(c)" -> "C".
  if (s.size() == 1 || (s.size() == 3 && s.front() == '(' && s.back() == ')')) {
    const char letter = s.size() == 1 ? s[0] : s[1];
    if ((letter >= 'a' && letter <= 'j') || (letter >= 'A' && letter <= 'J')) {
      return std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(letter))));
    }
  }
  if (is_plain_number(s)) return normalize_number(s);
  if (const auto slash = s.find('/'); slash != std::string::npos && s.find('/', slash + 1) == std::string::npos) {
    std::string_view num = std::string_view(s).substr(0, slash);
    std::string_view den = std::string_view(s).substr(slash + 1);
    num = trim_view(num);
    den = trim_view(den);
    if (is_plain_number(num) && is_plain_number(den)) return normalize_number(num) + "/" + normalize_number(den);
  }
  return s;
}

}  // namespace detail

// Syntactic normal form used as answer identity. "0.5" and "1/2" stay distinct.
inline CanonicalAnswer canonicalize(std::string_view answer) {
  std::string current(answer);
  for (int guard = 0; guard < 64; ++guard) {
    std::string next = detail::canonicalize_once(current);
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

// Where an answer was found in a piece of text, before canonicalization.
struct AnswerSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::string raw;
};

inline constexpr std::size_t kFallbackTailChars = 200;
inline constexpr std::size_t kFallbackMaxAnswerChars = 40;

// Last balanced \boxed{...} span, else a short answer after "answer is",
// "answer:" or "=" on the last non-empty line of the final 200 characters.
inline std::optional<AnswerSpan> locate_answer(std::string_view text) {
  for (std::size_t pos = text.rfind("\\boxed"); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : text.rfind("\\boxed", pos - 1)) {
    auto open = detail::group_after(text, pos + 6);
    if (!open) continue;
    auto close = detail::matching_brace(text, *open);
    if (!close) continue;
    return AnswerSpan{*open + 1, *close, std::string(text.substr(*open + 1, *close - *open - 1))};
  }

  const std::size_t tail_begin = text.size() > kFallbackTailChars ? text.size() - kFallbackTailChars : 0;
  std::string_view tail = text.substr(tail_begin);
  while (!tail.empty() && detail::is_space(tail.back())) tail.remove_suffix(1);
  if (tail.empty()) return std::nullopt;
  const auto nl = tail.find_last_of('\n');
  const std::size_t line_begin = nl == std::string_view::npos ? 0 : nl + 1;
  const std::string_view line = tail.substr(line_begin);

  std::string lower(line);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); });
  std::optional<std::size_t> after;
  for (std::string_view marker : {"answer is", "answer:", "="}) {
    const auto at = lower.rfind(marker);
    if (at != std::string::npos && (!after || at + marker.size() > *after)) after = at + marker.size();
  }
  if (!after) return std::nullopt;

  std::string_view candidate = line.substr(*after);
  std::size_t lead = 0;
  while (lead < candidate.size() && detail::is_space(candidate[lead])) ++lead;
  candidate.remove_prefix(lead);
  while (!candidate.empty() && std::string_view(".,;:! \t").find(candidate.back()) != std::string_view::npos) {
    candidate.remove_suffix(1);
  }
  if (candidate.empty() || candidate.size() > kFallbackMaxAnswerChars) return std::nullopt;
  const std::size_t begin = tail_begin + line_begin + *after + lead;
  return AnswerSpan{begin, begin + candidate.size(), std::string(candidate)};
}

// Total: never throws, returns nullopt when no answer can be found.
inline std::optional<CanonicalAnswer> parse_answer(std::string_view text) {
  auto span = locate_answer(text);
  if (!span) return std::nullopt;
  auto canonical = canonicalize(span->raw);
  if (canonical.empty()) return std::nullopt;
  return canonical;
}

struct InducedAnswer {
  std::string raw_text;
  std::optional<CanonicalAnswer> canonical;
  std::vector<TokenDistribution> distributions;  // one per answer token
  std::size_t token_cost = 0;

  std::optional<AnswerConfidence> confidence() const {
    if (!canonical || distributions.empty()) return std::nullopt;
    return answer_confidence(distributions);
  }
};

// Interprets an auxiliary generation. When the template leaves "\boxed{" open
// the reply is parsed as if that prefix were part of it. Answer tokens are the
// generated tokens overlapping the located answer span; every generated token
// counts toward token_cost.
inline InducedAnswer interpret_induction(const InductionResponse& response, const InductionPrompt& prompt,
                                         std::size_t top_k) {
  InducedAnswer out;
  out.raw_text = response.text;
  out.token_cost = response.tokens.size();

  const std::string prefix = prompt.opens_box() ? std::string(kBoxOpen) : std::string();
  const std::string parse_text = prefix + response.text;
  auto span = locate_answer(parse_text);
  if (!span) return out;
  auto canonical = canonicalize(span->raw);
  if (canonical.empty()) return out;

  const std::size_t ans_begin = span->begin >= prefix.size() ? span->begin - prefix.size() : 0;
  const std::size_t ans_end = span->end >= prefix.size() ? span->end - prefix.size() : 0;
  std::size_t offset = 0;
  for (const auto& tok : response.tokens) {
    const std::size_t tok_begin = offset;
    const std::size_t tok_end = offset + tok.text.size();
    offset = tok_end;
    if (tok_end <= ans_begin || tok_begin >= ans_end) continue;
    if (tok.top_candidates.empty()) {
      throw ValidationError("induction token '" + tok.text + "' carries no candidate probabilities");
    }
    out.distributions.push_back(TokenDistribution::from_candidates(tok.top_candidates, top_k));
  }
  if (out.distributions.empty()) return out;
  out.canonical = std::move(canonical);
  return out;
}

inline InducedAnswer induce(ModelDriver& driver, std::size_t step_index, const std::string& question,
                            const std::string& accumulated_reasoning, const InductionPrompt& prompt,
                            std::size_t top_k) {
  if (accumulated_reasoning.empty()) throw ValidationError("induce: accumulated reasoning is empty");
  InductionRequest request;
  request.step_index = step_index;
  request.question = question;
  request.reasoning = accumulated_reasoning;
  request.prompt_text = prompt.render(accumulated_reasoning);
  request.max_answer_tokens = prompt.max_answer_tokens;
  InductionResponse response;
  try {
    response = driver.induce(request);
  } catch (const DriverError& e) {
    if (e.step()) throw;
    throw DriverError(e.what(), e.retryable(), static_cast<int>(step_index));
  }
  return interpret_induction(response, prompt, top_k);
}

inline StepEvidence evidence_from(std::size_t step_index, const InducedAnswer& induced) {
  auto conf = induced.confidence();
  if (!conf) return make_evidence(step_index, std::nullopt, std::nullopt);
  return make_evidence(step_index, induced.canonical, conf);
}

}  // namespace trace_exit

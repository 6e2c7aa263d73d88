// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Streaming step segmentation.
//
// Generated text is split into reasoning steps at discourse markers ("Wait",
// "Alternatively", blank lines, ...). The segmenter sees the stream token by
// token and scans the tail of its buffer every `scan_interval_tokens` tokens.
//
// Scanning uses a commit frontier: a start position is only decided once every
// marker that could begin there is fully visible (plus one lookahead character
// when whole-word matching is on). Each scan re-reads `overlap_chars` of already
// scanned text so markers that straddle a scan edge are still found, and
// positions behind the frontier are never reported twice. The reported events
// therefore come out in increasing position order and do not depend on how the
// text was tokenized or how often the buffer was scanned.
//
// A marker opens the step that follows it. Step 1 is whatever precedes the
// first marker. When `match_limit` events have been seen the trace is cut
// immediately before the last of them and the rest of the stream is dropped.

#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trace_exit/errors.hpp"
#include "trace_exit/token.hpp"

namespace trace_exit {

struct SegmenterConfig {
  std::vector<std::string> stop_tokens;
  std::size_t scan_interval_tokens = 10;
  std::size_t match_limit = 256;
  // Unset means max marker length - 1 (or the marker length with whole_word).
  std::optional<std::size_t> overlap_chars;
  // Reject matches glued to a neighbouring letter or digit ("But" in "Button").
  bool whole_word = false;

  std::size_t max_marker_length() const {
    std::size_t n = 0;
    for (const auto& s : stop_tokens) n = std::max(n, s.size());
    return n;
  }

  std::size_t min_overlap() const {
    const std::size_t len = max_marker_length();
    return whole_word ? len : (len == 0 ? 0 : len - 1);
  }

  std::size_t effective_overlap() const { return overlap_chars.value_or(min_overlap()); }

  void validate() const {
    if (stop_tokens.empty()) throw ValidationError("segmenter: stop_tokens must not be empty");
    for (const auto& s : stop_tokens) {
      if (s.empty()) throw ValidationError("segmenter: stop token must not be the empty string");
    }
    if (scan_interval_tokens < 1) throw ValidationError("segmenter: scan_interval_tokens must be >= 1");
    if (match_limit < 1) throw ValidationError("segmenter: match_limit must be >= 1");
    if (effective_overlap() < min_overlap()) {
      throw ValidationError("segmenter: overlap_chars must be >= " + std::to_string(min_overlap()));
    }
  }

  bool operator==(const SegmenterConfig&) const = default;
};

// Built-in marker sets: "default" for models that think with discourse cues,
// "gemini" for models that separate reasoning chunks with blank lines.
inline SegmenterConfig default_segmenter_profile() {
  SegmenterConfig cfg;
  cfg.stop_tokens = {"Wait", "But", "Let me think", "</think>", "Alternatively"};
  cfg.whole_word = true;
  return cfg;
}

inline SegmenterConfig gemini_segmenter_profile() {
  SegmenterConfig cfg;
  cfg.stop_tokens = {"\n\n"};
  cfg.whole_word = false;
  return cfg;
}

inline std::optional<SegmenterConfig> builtin_segmenter_profile(std::string_view name) {
  if (name == "default") return default_segmenter_profile();
  if (name == "gemini") return gemini_segmenter_profile();
  return std::nullopt;
}

struct BoundaryEvent {
  std::string marker;
  std::size_t char_position = 0;
  std::size_t ordinal = 0;  // 1-based

  bool operator==(const BoundaryEvent&) const = default;
};

struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - begin; }
  bool operator==(const CharRange&) const = default;
};

struct ReasoningStep {
  std::size_t index = 0;  // 1-based
  std::string text;
  std::size_t token_count = 0;
  CharRange char_range;
  std::string marker;  // marker that opened this step, empty for step 1

  bool operator==(const ReasoningStep&) const = default;
};

namespace detail {

inline bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || (u >= '0' && u <= '9') || (u >= 'A' && u <= 'Z') || (u >= 'a' && u <= 'z') || u == '_';
}

// Index into cfg.stop_tokens of the marker matching at `pos`, considering only
// text[0, visible). First marker in configured order wins.
inline std::optional<std::size_t> marker_at(std::string_view text, std::size_t visible, std::size_t pos,
                                            const SegmenterConfig& cfg) {
  for (std::size_t i = 0; i < cfg.stop_tokens.size(); ++i) {
    const std::string& s = cfg.stop_tokens[i];
    if (pos + s.size() > visible) continue;
    if (text.compare(pos, s.size(), s) != 0) continue;
    if (cfg.whole_word) {
      if (is_word_byte(s.front()) && pos > 0 && is_word_byte(text[pos - 1])) continue;
      const std::size_t after = pos + s.size();
      if (is_word_byte(s.back()) && after < text.size() && is_word_byte(text[after])) continue;
    }
    return i;
  }
  return std::nullopt;
}

// Cuts text at the event positions. Empty segments (a marker at offset 0) are
// skipped. token_starts must be sorted; a token belongs to the step holding its
// first character, and tokens starting at or past `end` are counted only when
// `count_tail` is set (natural end of stream).
inline std::vector<ReasoningStep> build_steps(std::string_view text, std::span<const BoundaryEvent> cuts,
                                              std::size_t end, std::span<const std::size_t> token_starts,
                                              bool count_tail) {
  std::vector<ReasoningStep> steps;
  std::size_t begin = 0;
  std::string opening;
  auto emit = [&](std::size_t stop, bool last) {
    if (stop <= begin) return;
    ReasoningStep step;
    step.index = steps.size() + 1;
    step.char_range = {begin, stop};
    step.text = std::string(text.substr(begin, stop - begin));
    step.marker = opening;
    auto lo = std::lower_bound(token_starts.begin(), token_starts.end(), begin);
    auto hi = (last && count_tail) ? token_starts.end()
                                   : std::lower_bound(token_starts.begin(), token_starts.end(), stop);
    step.token_count = static_cast<std::size_t>(hi - lo);
    steps.push_back(std::move(step));
  };
  for (const auto& ev : cuts) {
    emit(ev.char_position, false);
    begin = std::max(begin, ev.char_position);
    opening = ev.marker;
  }
  emit(end, true);
  return steps;
}

}  // namespace detail

class Segmenter {
 public:
  explicit Segmenter(SegmenterConfig config) : config_(std::move(config)) {
    config_.validate();
    max_len_ = config_.max_marker_length();
  }

  const SegmenterConfig& config() const { return config_; }
  const std::string& text() const { return text_; }
  const std::vector<BoundaryEvent>& events() const { return events_; }
  std::size_t tokens_fed() const { return token_starts_.size(); }
  bool truncated() const { return truncated_; }
  bool finalized() const { return finalized_; }

  // Length of the text that counts as reasoning (shorter than text() after truncation).
  std::size_t effective_length() const { return truncated_ ? events_.back().char_position : text_.size(); }

  std::vector<BoundaryEvent> feed(const TokenObservation& token) { return feed(std::string_view(token.text)); }

  std::vector<BoundaryEvent> feed(std::string_view token_text) {
    if (finalized_) throw UsageError("segmenter: feed() after finalize()");
    if (truncated_) return {};
    token_starts_.push_back(text_.size());
    text_.append(token_text);
    if (++since_scan_ < config_.scan_interval_tokens) return {};
    return scan(false);
  }

  // Steps closed by a boundary event since the previous call. The trailing
  // open segment is only returned by finalize().
  std::vector<ReasoningStep> drain_completed_steps() {
    if (events_.size() == drained_events_) return {};
    auto all = closed_steps();
    std::vector<ReasoningStep> fresh;
    for (auto& s : all) {
      if (s.index > drained_steps_) fresh.push_back(std::move(s));
    }
    drained_events_ = events_.size();
    drained_steps_ += fresh.size();
    return fresh;
  }

  std::size_t drained_step_count() const { return drained_steps_; }

  // Final scan and the complete step partition of the (possibly truncated) text.
  std::vector<ReasoningStep> finalize() {
    if (!finalized_) {
      if (!truncated_) scan(true);
      finalized_ = true;
    }
    return all_steps();
  }

  std::vector<ReasoningStep> all_steps() const {
    const std::size_t end = effective_length();
    std::span<const BoundaryEvent> cuts(events_);
    if (truncated_) cuts = cuts.first(cuts.size() - 1);
    return detail::build_steps(text_, cuts, end, token_starts_, !truncated_);
  }

  bool operator==(const Segmenter&) const = default;

 private:
  std::vector<ReasoningStep> closed_steps() const {
    auto steps = all_steps();
    if (!truncated_ && !steps.empty() && steps.back().char_range.end == text_.size()) steps.pop_back();
    return steps;
  }

  std::vector<BoundaryEvent> scan(bool final_scan) {
    since_scan_ = 0;
    const std::size_t lookahead = config_.whole_word ? 1 : 0;
    const std::size_t limit = final_scan ? text_.size() : (text_.size() >= lookahead ? text_.size() - lookahead : 0);
    std::size_t commit = final_scan ? text_.size() : (limit + 1 > max_len_ ? limit + 1 - max_len_ : 0);
    commit = std::max(commit, frontier_);
    const std::size_t overlap = config_.effective_overlap();
    const std::size_t scan_from = last_limit_ > overlap ? last_limit_ - overlap : 0;

    std::vector<BoundaryEvent> fresh;
    for (std::size_t pos = std::max(scan_from, frontier_); pos < commit; ++pos) {
      auto idx = detail::marker_at(text_, limit, pos, config_);
      if (!idx) continue;
      BoundaryEvent ev{config_.stop_tokens[*idx], pos, events_.size() + 1};
      events_.push_back(ev);
      fresh.push_back(std::move(ev));
      if (events_.size() >= config_.match_limit) {
        truncated_ = true;
        break;
      }
    }
    frontier_ = commit;
    last_limit_ = limit;
    return fresh;
  }

  SegmenterConfig config_;
  std::size_t max_len_ = 0;
  std::string text_;
  std::vector<std::size_t> token_starts_;
  std::vector<BoundaryEvent> events_;
  std::size_t since_scan_ = 0;
  std::size_t frontier_ = 0;
  std::size_t last_limit_ = 0;
  std::size_t drained_events_ = 0;
  std::size_t drained_steps_ = 0;
  bool truncated_ = false;
  bool finalized_ = false;
};

// Boundary events of a complete text, found with a single left-to-right pass.
inline std::vector<BoundaryEvent> find_boundaries(std::string_view text, const SegmenterConfig& config) {
  config.validate();
  std::vector<BoundaryEvent> events;
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    auto idx = detail::marker_at(text, text.size(), pos, config);
    if (!idx) continue;
    events.push_back({config.stop_tokens[*idx], pos, events.size() + 1});
    if (events.size() >= config.match_limit) break;
  }
  return events;
}

// Batch counterpart of Segmenter. `token_starts` (sorted character offsets of
// each token) is only needed for token accounting.
inline std::vector<ReasoningStep> offline_segment(std::string_view text, const SegmenterConfig& config,
                                                  std::span<const std::size_t> token_starts = {}) {
  auto events = find_boundaries(text, config);
  const bool truncated = events.size() >= config.match_limit;
  const std::size_t end = truncated ? events.back().char_position : text.size();
  std::span<const BoundaryEvent> cuts(events);
  if (truncated) cuts = cuts.first(cuts.size() - 1);
  return detail::build_steps(text, cuts, end, token_starts, !truncated);
}

}  // namespace trace_exit

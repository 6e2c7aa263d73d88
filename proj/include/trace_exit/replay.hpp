// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic replay of recorded model output, and a recording wrapper that
// captures any driver's traffic in the same format.
//
// File format (JSONL, one object per line; see docs/replay-format.md):
//
//   {"format":"trace-exit-replay","version":1,"question":"...","gold":"...",
//    "complete":true,"stream_end":"natural","coverage":"full"}
//   {"kind":"token","text":"Wait","top":[["Wait",0.93],["But",0.04]]}
//   ...
//   {"kind":"induction","step":1,"text":"42}","tokens":[{"text":"42","top":[["42",0.99]]}, ...]}

#pragma once

#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trace_exit/driver.hpp"
#include "trace_exit/errors.hpp"
#include "trace_exit/stepper.hpp"

namespace trace_exit {

inline constexpr std::string_view kReplayFormat = "trace-exit-replay";
inline constexpr int kReplayVersion = 1;

enum class StreamEnd { natural, cancelled };

// "full": an induction script exists for every step of the main stream.
// "recorded": scripts exist only for the steps a recorded session induced.
enum class ScriptCoverage { full, recorded };

struct ReplayTrace {
  std::string question;
  std::optional<std::string> gold_answer;
  std::vector<TokenObservation> main_stream;
  std::map<std::size_t, InductionResponse> induction_responses;
  bool complete = true;
  StreamEnd stream_end = StreamEnd::natural;
  ScriptCoverage coverage = ScriptCoverage::full;

  std::string main_text() const {
    std::string out;
    for (const auto& t : main_stream) out += t.text;
    return out;
  }

  bool operator==(const ReplayTrace&) const = default;
};

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson candidates_to_json(const std::vector<TokenCandidate>& cands) {
  ojson arr = ojson::array();
  for (const auto& c : cands) arr.push_back(ojson::array({c.text, c.probability}));
  return arr;
}

inline ojson token_to_json(const TokenObservation& t) {
  ojson j;
  j["text"] = t.text;
  j["top"] = candidates_to_json(t.top_candidates);
  return j;
}

inline TokenObservation token_from_json(const nlohmann::json& j, std::size_t line) {
  TokenObservation t;
  if (!j.contains("text") || !j["text"].is_string()) throw FormatError("token without a string \"text\"", line);
  t.text = j["text"].get<std::string>();
  if (!j.contains("top") || !j["top"].is_array() || j["top"].empty()) {
    throw FormatError("token \"" + t.text + "\" has no \"top\" candidates", line);
  }
  bool has_chosen = false;
  double prev = 2.0;
  for (const auto& c : j["top"]) {
    if (!c.is_array() || c.size() != 2 || !c[0].is_string() || !c[1].is_number()) {
      throw FormatError("candidate must be [text, probability]", line);
    }
    TokenCandidate cand{c[0].get<std::string>(), c[1].get<double>()};
    if (!(cand.probability > 0.0 && cand.probability <= 1.0)) {
      throw FormatError("candidate probability outside (0, 1]", line);
    }
    if (cand.probability > prev) throw FormatError("candidates are not in descending probability order", line);
    prev = cand.probability;
    has_chosen = has_chosen || cand.text == t.text;
    t.top_candidates.push_back(std::move(cand));
  }
  if (!has_chosen) throw FormatError("chosen token \"" + t.text + "\" missing from its candidates", line);
  return t;
}

inline std::string_view stream_end_name(StreamEnd e) { return e == StreamEnd::natural ? "natural" : "cancelled"; }
inline std::string_view coverage_name(ScriptCoverage c) { return c == ScriptCoverage::full ? "full" : "recorded"; }

}  // namespace detail

struct ReplayLoadOptions {
  // Segmentation used to check script coverage. Unset skips the check.
  std::optional<SegmenterConfig> segmenter;
  bool allow_partial = false;
};

inline void validate_replay(const ReplayTrace& trace, const ReplayLoadOptions& options) {
  if (!trace.complete && !options.allow_partial) {
    throw ValidationError("replay trace is marked incomplete (recording ended with an error); "
                          "pass --allow-partial to load it anyway");
  }
  if (!options.segmenter) return;
  std::vector<std::size_t> starts;
  std::size_t offset = 0;
  for (const auto& t : trace.main_stream) {
    starts.push_back(offset);
    offset += t.text.size();
  }
  const auto steps = offline_segment(trace.main_text(), *options.segmenter, starts);
  for (const auto& [step, _] : trace.induction_responses) {
    if (step < 1 || step > steps.size()) {
      throw ValidationError("induction script for step " + std::to_string(step) + " but the main stream has only " +
                            std::to_string(steps.size()) + " steps");
    }
  }
  if (trace.coverage == ScriptCoverage::recorded || trace.induction_responses.empty()) return;
  // A cancelled stream's last segment may be an unfinished step.
  const std::size_t required = trace.stream_end == StreamEnd::natural ? steps.size() : steps.size() - 1;
  for (std::size_t s = 1; s <= required; ++s) {
    if (!trace.induction_responses.count(s)) {
      throw ValidationError("missing induction script for step " + std::to_string(s));
    }
  }
}

inline ReplayTrace parse_replay(std::istream& in, const ReplayLoadOptions& options = {}) {
  ReplayTrace trace;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw FormatError("expected a JSON object", line_no);
    try {
      if (!have_header) {
        if (j.value("format", "") != kReplayFormat) throw FormatError("missing replay header", line_no);
        if (j.value("version", 0) != kReplayVersion) {
          throw FormatError("unsupported replay version " + j.value("version", nlohmann::json()).dump(), line_no);
        }
        trace.question = j.value("question", "");
        if (j.contains("gold") && j["gold"].is_string()) trace.gold_answer = j["gold"].get<std::string>();
        trace.complete = j.value("complete", true);
        const std::string end = j.value("stream_end", "natural");
        if (end != "natural" && end != "cancelled") throw FormatError("unknown stream_end '" + end + "'", line_no);
        trace.stream_end = end == "natural" ? StreamEnd::natural : StreamEnd::cancelled;
        const std::string cov = j.value("coverage", "full");
        if (cov != "full" && cov != "recorded") throw FormatError("unknown coverage '" + cov + "'", line_no);
        trace.coverage = cov == "full" ? ScriptCoverage::full : ScriptCoverage::recorded;
        have_header = true;
        continue;
      }
      const std::string kind = j.value("kind", "");
      if (kind == "token") {
        auto tok = detail::token_from_json(j, line_no);
        tok.position = trace.main_stream.size();
        trace.main_stream.push_back(std::move(tok));
      } else if (kind == "induction") {
        if (!j.contains("step") || !j["step"].is_number_unsigned() || j["step"].get<std::size_t>() < 1) {
          throw FormatError("induction without a positive \"step\"", line_no);
        }
        const auto step = j["step"].get<std::size_t>();
        if (trace.induction_responses.count(step)) {
          throw FormatError("duplicate induction script for step " + std::to_string(step), line_no);
        }
        InductionResponse resp;
        resp.text = j.value("text", "");
        if (j.contains("tokens")) {
          if (!j["tokens"].is_array()) throw FormatError("\"tokens\" must be an array", line_no);
          for (const auto& t : j["tokens"]) {
            auto tok = detail::token_from_json(t, line_no);
            tok.position = resp.tokens.size();
            resp.tokens.push_back(std::move(tok));
          }
        }
        trace.induction_responses.emplace(step, std::move(resp));
      } else {
        throw FormatError("unknown record kind '" + kind + "'", line_no);
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  if (!have_header) throw FormatError("empty replay file", 0);
  validate_replay(trace, options);
  return trace;
}

inline ReplayTrace load_replay(const std::string& path, const ReplayLoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open replay file: " + path);
  try {
    return parse_replay(in, options);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline void write_replay(std::ostream& out, const ReplayTrace& trace) {
  detail::ojson header;
  header["format"] = kReplayFormat;
  header["version"] = kReplayVersion;
  header["question"] = trace.question;
  header["gold"] = trace.gold_answer ? detail::ojson(*trace.gold_answer) : detail::ojson(nullptr);
  header["complete"] = trace.complete;
  header["stream_end"] = detail::stream_end_name(trace.stream_end);
  header["coverage"] = detail::coverage_name(trace.coverage);
  out << header.dump() << '\n';
  for (const auto& t : trace.main_stream) {
    detail::ojson j;
    j["kind"] = "token";
    j["text"] = t.text;
    j["top"] = detail::candidates_to_json(t.top_candidates);
    out << j.dump() << '\n';
  }
  for (const auto& [step, resp] : trace.induction_responses) {
    detail::ojson j;
    j["kind"] = "induction";
    j["step"] = step;
    j["text"] = resp.text;
    j["tokens"] = detail::ojson::array();
    for (const auto& t : resp.tokens) j["tokens"].push_back(detail::token_to_json(t));
    out << j.dump() << '\n';
  }
}

inline void save_replay(const std::string& path, const ReplayTrace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write replay file: " + path);
  write_replay(out, trace);
  out.flush();
  if (!out) throw IoError("failed writing replay file: " + path);
}

// Serves a ReplayTrace. The cursor is per driver, so each session needs its own
// instance; the trace itself may be shared.
class ReplayDriver final : public ModelDriver {
 public:
  explicit ReplayDriver(std::shared_ptr<const ReplayTrace> trace) : trace_(std::move(trace)) {}
  explicit ReplayDriver(ReplayTrace trace) : trace_(std::make_shared<const ReplayTrace>(std::move(trace))) {}

  void start(const std::string& /*question*/) override { reset(); }

  void reset() {
    cursor_ = 0;
    cancelled_ = false;
  }

  std::optional<TokenObservation> next_token() override {
    if (cancelled_ || cursor_ >= trace_->main_stream.size()) return std::nullopt;
    return trace_->main_stream[cursor_++];
  }

  void cancel() override { cancelled_ = true; }

  InductionResponse induce(const InductionRequest& request) override {
    auto it = trace_->induction_responses.find(request.step_index);
    if (it == trace_->induction_responses.end()) {
      throw DriverError("replay has no scripted induction", false, static_cast<int>(request.step_index));
    }
    return it->second;
  }

  std::string name() const override { return "replay"; }

  const ReplayTrace& trace() const { return *trace_; }
  std::size_t cursor() const { return cursor_; }

 private:
  std::shared_ptr<const ReplayTrace> trace_;
  std::size_t cursor_ = 0;
  bool cancelled_ = false;
};

// Pass-through driver that captures everything the wrapped driver delivers.
class RecordingDriver final : public ModelDriver {
 public:
  explicit RecordingDriver(ModelDriver& inner) : inner_(inner) {}

  void start(const std::string& question) override {
    trace_ = ReplayTrace{};
    trace_.question = question;
    trace_.coverage = ScriptCoverage::recorded;
    inner_.start(question);
  }

  std::optional<TokenObservation> next_token() override {
    try {
      auto tok = inner_.next_token();
      if (tok) trace_.main_stream.push_back(*tok);
      return tok;
    } catch (...) {
      trace_.complete = false;
      throw;
    }
  }

  void cancel() override {
    trace_.stream_end = StreamEnd::cancelled;
    inner_.cancel();
  }

  InductionResponse induce(const InductionRequest& request) override {
    try {
      auto resp = inner_.induce(request);
      trace_.induction_responses[request.step_index] = resp;
      return resp;
    } catch (...) {
      trace_.complete = false;
      throw;
    }
  }

  std::string name() const override { return inner_.name(); }

  void set_gold(std::optional<std::string> gold) { trace_.gold_answer = std::move(gold); }
  void mark_incomplete() { trace_.complete = false; }
  const ReplayTrace& trace() const { return trace_; }

 private:
  ModelDriver& inner_;
  ReplayTrace trace_;
};

inline ReplayTrace record_session(const RecordingDriver& recorder, const std::string& output_path) {
  save_replay(output_path, recorder.trace());
  return recorder.trace();
}

}  // namespace trace_exit

// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// CSV and JSON writers for harness results. Column sets are described in
// docs/outputs.md.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "trace_exit/harness.hpp"
#include "trace_exit/session_json.hpp"

namespace trace_exit {

inline constexpr std::string_view kMetricsSchema = "trace-exit/metrics/v1";
inline constexpr std::string_view kSweepSchema = "trace-exit/sweep/v1";
inline constexpr std::string_view kCurveSchema = "trace-exit/curve/v1";

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// Shortest form that reads back to the same double.
inline std::string num(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, std::span<const EvalMetrics> rows) {
  os << "policy,items,accuracy,mean_tokens,compression_rate,induction_ratio,mean_reasoning_tokens,"
        "mean_induction_tokens,errors,numeric_equivalence\n";
  for (const auto& m : rows) {
    os << to_string(m.policy) << ',' << m.items << ',' << detail::num(m.accuracy) << ','
       << detail::num(m.mean_tokens) << ',' << detail::opt_num(m.compression_rate) << ','
       << detail::num(m.induction_ratio) << ',' << detail::num(m.mean_reasoning_tokens) << ','
       << detail::num(m.mean_induction_tokens) << ',' << m.errors << ','
       << (m.numeric_equivalence ? "true" : "false") << '\n';
  }
}

inline void write_items_csv(std::ostream& os, std::span<const ItemResult> rows) {
  os << "id,policy,correct,final_answer,gold,exit_step,exited_early,reason,reasoning_tokens,induction_tokens,"
        "total_tokens,error\n";
  for (const auto& r : rows) {
    os << detail::csv_field(r.id) << ',' << to_string(r.policy) << ',' << (r.correct ? "true" : "false") << ','
       << detail::csv_field(r.final_answer.value_or("")) << ',' << detail::csv_field(r.gold) << ',' << r.exit_step
       << ',' << (r.exited_early ? "true" : "false") << ',' << to_string(r.reason) << ',' << r.reasoning_tokens
       << ',' << r.induction_tokens << ',' << r.total_tokens() << ',' << detail::csv_field(r.error.value_or(""))
       << '\n';
  }
}

inline nlohmann::ordered_json to_json(const ItemResult& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["policy"] = std::string(to_string(r.policy));
  j["correct"] = r.correct;
  j["final_answer"] = detail::optional_json(r.final_answer);
  j["gold"] = r.gold;
  j["exit_step"] = r.exit_step;
  j["exited_early"] = r.exited_early;
  j["reason"] = std::string(to_string(r.reason));
  j["reasoning_tokens"] = r.reasoning_tokens;
  j["induction_tokens"] = r.induction_tokens;
  j["total_tokens"] = r.total_tokens();
  j["error"] = detail::optional_json(r.error);
  return j;
}

inline nlohmann::ordered_json to_json(const EvalMetrics& m) {
  nlohmann::ordered_json j;
  j["schema"] = std::string(kMetricsSchema);
  j["policy"] = std::string(to_string(m.policy));
  j["items"] = m.items;
  j["accuracy"] = m.accuracy;
  j["mean_tokens"] = m.mean_tokens;
  j["compression_rate"] = detail::optional_json(m.compression_rate);
  j["induction_ratio"] = m.induction_ratio;
  j["mean_reasoning_tokens"] = m.mean_reasoning_tokens;
  j["mean_induction_tokens"] = m.mean_induction_tokens;
  j["errors"] = m.errors;
  j["numeric_equivalence"] = m.numeric_equivalence;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : m.rows) j["rows"].push_back(to_json(r));
  return j;
}

inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "axis,value,accuracy,delta_accuracy,mean_tokens,compression_rate,induction_ratio,items\n";
  for (const auto& r : rows) {
    os << to_string(r.axis) << ',' << detail::num(r.value) << ',' << detail::num(r.metrics.accuracy) << ','
       << detail::num(r.delta_accuracy) << ',' << detail::num(r.metrics.mean_tokens) << ','
       << detail::opt_num(r.metrics.compression_rate) << ',' << detail::num(r.metrics.induction_ratio) << ','
       << r.metrics.items << '\n';
  }
}

inline nlohmann::ordered_json to_json(std::span<const SweepRow> rows) {
  nlohmann::ordered_json j;
  j["schema"] = std::string(kSweepSchema);
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["axis"] = std::string(to_string(r.axis));
    row["value"] = r.value;
    row["delta_accuracy"] = r.delta_accuracy;
    row["metrics"] = to_json(r.metrics);
    j["rows"].push_back(row);
  }
  return j;
}

inline void write_curve_csv(std::ostream& os, std::span<const CurveRow> rows) {
  os << "policy,tau,mean_tokens,accuracy\n";
  for (const auto& r : rows) {
    os << to_string(r.policy) << ',' << detail::num(r.tau) << ',' << detail::num(r.mean_tokens) << ','
       << detail::num(r.accuracy) << '\n';
  }
}

inline nlohmann::ordered_json to_json(std::span<const CurveRow> rows) {
  nlohmann::ordered_json j;
  j["schema"] = std::string(kCurveSchema);
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"policy", std::string(to_string(r.policy))},
                         {"tau", r.tau},
                         {"mean_tokens", r.mean_tokens},
                         {"accuracy", r.accuracy}});
  }
  return j;
}

inline void write_distributions_csv(std::ostream& os, const AnalysisExport& ex) {
  os << "record,step,score_kind,value,correct\n";
  for (const auto& r : ex.step_rows) {
    os << detail::csv_field(r.record) << ',' << r.step << ',' << r.score_kind << ',' << detail::num(r.value) << ','
       << (r.correct ? "true" : "false") << '\n';
  }
}

inline void write_consistency_csv(std::ostream& os, const AnalysisExport& ex) {
  os << "record,policy,consistency\n";
  for (const auto& r : ex.consistency_rows) {
    os << detail::csv_field(r.record) << ',' << to_string(r.policy) << ',' << detail::num(r.consistency) << '\n';
  }
}

}  // namespace trace_exit

// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Batch evaluation over a problem set: accuracy, mean tokens, compression rate
// against the vanilla baseline, induction overhead, parameter sweeps,
// accuracy/token trade-off curves and raw score exports for plotting.
//
// Sweeps and curves run each item once with exhaustive induction and then
// re-score the recorded evidence for every parameter value, so the model is
// never queried again per value.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "trace_exit/controller.hpp"
#include "trace_exit/errors.hpp"
#include "trace_exit/replay.hpp"

namespace trace_exit {

struct ProblemItem {
  std::string id;
  std::string question;
  CanonicalAnswer gold;
  std::optional<std::string> replay_path;
};

struct ProblemSet {
  std::vector<ProblemItem> items;

  void validate() const {
    std::set<std::string> seen;
    for (const auto& it : items) {
      if (!seen.insert(it.id).second) throw ValidationError("problem set: duplicate id '" + it.id + "'");
    }
  }
};

// JSONL, one {"id", "question", "answer", "replay"?} object per line. Relative
// replay paths are resolved against the set file's directory.
inline ProblemSet load_problem_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open problem set: " + path);
  const auto base = std::filesystem::path(path).parent_path();
  ProblemSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ProblemItem item;
      item.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      item.question = j.value("question", "");
      const auto& ans = j.at("answer");
      item.gold = canonicalize(ans.is_string() ? ans.get<std::string>() : ans.dump());
      if (j.contains("replay") && j["replay"].is_string()) {
        auto p = std::filesystem::path(j["replay"].get<std::string>());
        item.replay_path = (p.is_relative() ? base / p : p).string();
      }
      set.items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what(), line_no);
    }
  }
  set.validate();
  return set;
}

using DriverFactory = std::function<std::unique_ptr<ModelDriver>(const ProblemItem&)>;

// Replay drivers for items that name a trace file. Each trace is parsed once
// and shared between the sessions that use it.
inline DriverFactory replay_driver_factory(ReplayLoadOptions options) {
  struct Cache {
    std::mutex mu;
    std::map<std::string, std::shared_ptr<const ReplayTrace>> traces;
  };
  auto cache = std::make_shared<Cache>();
  return [cache, options = std::move(options)](const ProblemItem& item) -> std::unique_ptr<ModelDriver> {
    if (!item.replay_path) throw ConfigError("item '" + item.id + "' has no replay trace and no live endpoint is set");
    std::shared_ptr<const ReplayTrace> trace;
    {
      std::lock_guard lock(cache->mu);
      auto& slot = cache->traces[*item.replay_path];
      if (!slot) slot = std::make_shared<const ReplayTrace>(load_replay(*item.replay_path, options));
      trace = slot;
    }
    return std::make_unique<ReplayDriver>(trace);
  };
}

// Exact rational comparison of plain numbers, fractions and decimals, falling
// back to canonical string equality. Off by default.
namespace detail {

__extension__ using int128 = __int128;

struct Rational {
  int128 num = 0;
  int128 den = 1;
};

inline int128 gcd128(int128 a, int128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

// Lowest terms with a positive denominator, so equal values compare field-wise.
inline Rational reduced(Rational r) {
  if (r.den < 0) {
    r.num = -r.num;
    r.den = -r.den;
  }
  const int128 g = gcd128(r.num, r.den);
  if (g > 1) {
    r.num /= g;
    r.den /= g;
  }
  return r;
}

inline std::optional<Rational> parse_decimal(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    neg = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.empty() || s.size() > 30) return std::nullopt;
  Rational r;
  bool dot = false, any = false;
  std::size_t significant = 0;
  for (char c : s) {
    if (c == '.') {
      if (dot) return std::nullopt;
      dot = true;
      continue;
    }
    if (c < '0' || c > '9') return std::nullopt;
    any = true;
    if (r.num != 0 || c != '0') ++significant;
    if (significant > 18) return std::nullopt;
    r.num = r.num * 10 + (c - '0');
    if (dot) r.den *= 10;
  }
  if (!any) return std::nullopt;
  if (neg) r.num = -r.num;
  return reduced(r);
}

inline std::optional<Rational> parse_rational(std::string_view s) {
  const auto slash = s.find('/');
  if (slash == std::string_view::npos) return parse_decimal(s);
  auto n = parse_decimal(s.substr(0, slash));
  auto d = parse_decimal(s.substr(slash + 1));
  if (!n || !d || d->num == 0) return std::nullopt;
  Rational r;
  if (__builtin_mul_overflow(n->num, d->den, &r.num) || __builtin_mul_overflow(n->den, d->num, &r.den)) {
    return std::nullopt;
  }
  return reduced(r);
}

}  // namespace detail

inline bool numeric_equal(const CanonicalAnswer& predicted, const CanonicalAnswer& gold) {
  if (canonical_equal(predicted, gold)) return true;
  auto a = detail::parse_rational(canonicalize(predicted));
  auto b = detail::parse_rational(canonicalize(gold));
  return a && b && a->num == b->num && a->den == b->den;
}

struct ItemResult {
  std::string id;
  Policy policy = Policy::trace;
  bool correct = false;
  std::optional<CanonicalAnswer> final_answer;
  CanonicalAnswer gold;
  std::size_t exit_step = 0;
  bool exited_early = false;
  ExitReason reason = ExitReason::stream_end;
  std::size_t reasoning_tokens = 0;
  std::size_t induction_tokens = 0;
  std::optional<std::string> error;

  std::size_t total_tokens() const { return reasoning_tokens + induction_tokens; }
};

struct EvalMetrics {
  Policy policy = Policy::trace;
  std::size_t items = 0;
  double accuracy = 0.0;
  double mean_tokens = 0.0;  // reasoning + induction
  double mean_reasoning_tokens = 0.0;
  double mean_induction_tokens = 0.0;
  std::optional<double> compression_rate;
  double induction_ratio = 0.0;
  std::size_t errors = 0;
  bool numeric_equivalence = false;
  std::vector<ItemResult> rows;  // sorted by id
};

struct EvalOptions {
  std::size_t workers = 1;
  bool numeric_equivalence = false;
  bool compression_rate = true;
  // Mean tokens of the vanilla policy on the same set, if already known.
  std::optional<double> vanilla_mean_tokens;
  // Run vanilla when a compression rate is wanted and no cached mean is given.
  bool run_vanilla_baseline = true;

  AnswerJudge judge() const { return numeric_equivalence ? AnswerJudge(numeric_equal) : AnswerJudge(canonical_equal); }
};

// What a session decided, independent of how it was obtained.
struct Outcome {
  std::size_t exit_step = 0;
  bool exited_early = false;
  std::optional<CanonicalAnswer> final_answer;
  std::optional<double> trigger_score;
  ExitReason reason = ExitReason::stream_end;
  std::size_t reasoning_tokens = 0;
  std::size_t induction_tokens = 0;
  std::optional<std::string> error;

  bool operator==(const Outcome&) const = default;
};

inline Outcome outcome_of(const SessionRecord& rec) {
  return {rec.decision.step_index, rec.decision.exited_early, rec.decision.final_answer, rec.decision.trigger_score,
          rec.decision.reason,     rec.reasoning_tokens,       rec.induction_tokens,      rec.error};
}

// Replays the stop rule of `policy` over an exhaustive evidence record (from
// collect_evidence) without touching a model. Windows are rebuilt from scratch
// at every step.
inline Outcome rescore(const SessionRecord& full, Policy policy, const WindowConfig& window, Fallback fallback,
                       const std::optional<CanonicalAnswer>& gold = std::nullopt,
                       const AnswerJudge& judge = canonical_equal) {
  if (policy == Policy::vanilla || policy == Policy::fixed_budget) {
    throw UsageError("rescore: policy '" + std::string(to_string(policy)) + "' does not use step evidence");
  }
  if (policy == Policy::oracle && !gold) throw UsageError("rescore: oracle needs a gold answer");
  window.validate();
  const auto& steps = full.steps;
  std::vector<StepEvidence> evidence;
  for (const auto& s : steps) {
    if (!s.evidence) throw ValidationError("rescore: record lacks evidence at step " + std::to_string(s.step.index));
    evidence.push_back(*s.evidence);
  }

  Outcome out;
  out.error = full.error;
  std::optional<std::size_t> stop_at;
  std::optional<double> best_score;
  std::optional<CanonicalAnswer> best_answer;
  for (std::size_t t = 0; t < evidence.size() && !stop_at; ++t) {
    const std::size_t from = t + 1 > window.k ? t + 1 - window.k : 0;
    const std::span<const StepEvidence> win(evidence.data() + from, t + 1 - from);
    const auto report = stability(win, window);
    if (report.selected && (!best_score || *report.selected_score() >= *best_score)) {
      best_score = report.selected_score();
      best_answer = report.selected;
    }
    const auto& ev = evidence[t];
    switch (policy) {
      case Policy::trace:
        if (report.exit) {
          stop_at = t;
          out.final_answer = report.selected;
          out.trigger_score = report.selected_score();
        }
        break;
      case Policy::single_step:
        if (ev.confidence && ev.confidence->value >= window.tau) {
          stop_at = t;
          out.final_answer = ev.answer;
          out.trigger_score = ev.confidence->value;
        }
        break;
      case Policy::oracle:
        if (ev.answer && judge(*ev.answer, *gold)) {
          stop_at = t;
          out.final_answer = ev.answer;
          out.trigger_score = 1.0;
        }
        break;
      default:
        break;
    }
  }

  const std::size_t used = stop_at ? *stop_at + 1 : steps.size();
  for (std::size_t i = 0; i < used; ++i) {
    out.reasoning_tokens += steps[i].step.token_count;
    out.induction_tokens += steps[i].induction_tokens;
  }
  out.exit_step = stop_at ? *stop_at + 1 : full.decision.step_index;
  if (stop_at && !full.error) {
    out.exited_early = true;
    out.reason = ExitReason::threshold;
  } else {
    out.final_answer.reset();
    out.trigger_score.reset();
    out.reason = full.decision.reason;
    if (fallback == Fallback::best_score && best_answer) {
      out.final_answer = best_answer;
    } else {
      for (std::size_t i = used; i-- > 0;) {
        if (evidence[i].answer) {
          out.final_answer = evidence[i].answer;
          break;
        }
      }
    }
  }
  return out;
}

inline ItemResult make_item_result(const ProblemItem& item, Policy policy, const Outcome& o, const AnswerJudge& judge) {
  ItemResult r;
  r.id = item.id;
  r.policy = policy;
  r.gold = item.gold;
  r.final_answer = o.final_answer;
  r.correct = o.final_answer.has_value() && judge(*o.final_answer, item.gold);
  r.exit_step = o.exit_step;
  r.exited_early = o.exited_early;
  r.reason = o.reason;
  r.reasoning_tokens = o.reasoning_tokens;
  r.induction_tokens = o.induction_tokens;
  r.error = o.error;
  return r;
}

// Aggregates rows in id order. `vanilla_mean` feeds the compression rate.
inline EvalMetrics aggregate(Policy policy, std::vector<ItemResult> rows, std::optional<double> vanilla_mean,
                             bool numeric_equivalence) {
  std::sort(rows.begin(), rows.end(), [](const ItemResult& a, const ItemResult& b) { return a.id < b.id; });
  EvalMetrics m;
  m.policy = policy;
  m.items = rows.size();
  m.numeric_equivalence = numeric_equivalence;
  std::size_t correct = 0, reasoning = 0, induction = 0;
  for (const auto& r : rows) {
    correct += r.correct ? 1 : 0;
    reasoning += r.reasoning_tokens;
    induction += r.induction_tokens;
    m.errors += r.error ? 1 : 0;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    m.accuracy = static_cast<double>(correct) / n;
    m.mean_reasoning_tokens = static_cast<double>(reasoning) / n;
    m.mean_induction_tokens = static_cast<double>(induction) / n;
    m.mean_tokens = static_cast<double>(reasoning + induction) / n;
  }
  if (reasoning + induction > 0) {
    m.induction_ratio = static_cast<double>(induction) / static_cast<double>(reasoning + induction);
  }
  if (policy == Policy::vanilla) {
    m.compression_rate = 1.0;
  } else if (vanilla_mean) {
    if (*vanilla_mean <= 0.0) throw ValidationError("vanilla baseline has zero mean tokens");
    m.compression_rate = m.mean_tokens / *vanilla_mean;
  }
  m.rows = std::move(rows);
  return m;
}

namespace detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

// One session per item with the configured policy.
inline std::vector<SessionRecord> run_all(const ProblemSet& set, const SessionConfig& config,
                                          const DriverFactory& factory, const EvalOptions& options) {
  set.validate();
  std::vector<SessionRecord> records(set.items.size());
  const auto judge = options.judge();
  detail::parallel_for(set.items.size(), options.workers, [&](std::size_t i) {
    const auto& item = set.items[i];
    auto driver = factory(item);
    records[i] = run_session(*driver, item.question, config, item.gold, judge);
  });
  return records;
}

inline std::vector<SessionRecord> collect_all(const ProblemSet& set, const SessionConfig& config,
                                              const DriverFactory& factory, const EvalOptions& options) {
  set.validate();
  std::vector<SessionRecord> records(set.items.size());
  detail::parallel_for(set.items.size(), options.workers, [&](std::size_t i) {
    const auto& item = set.items[i];
    auto driver = factory(item);
    records[i] = collect_evidence(*driver, item.question, config);
    records[i].gold = item.gold;
  });
  return records;
}

inline double vanilla_mean_tokens(const ProblemSet& set, const SessionConfig& config, const DriverFactory& factory,
                                  const EvalOptions& options) {
  SessionConfig vanilla = config;
  vanilla.policy = Policy::vanilla;
  const auto records = run_all(set, vanilla, factory, options);
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += static_cast<double>(r.total_tokens());
  return total / static_cast<double>(records.size());
}

namespace detail {

inline std::optional<double> resolve_baseline(const ProblemSet& set, const SessionConfig& config,
                                              const DriverFactory& factory, const EvalOptions& options) {
  if (!options.compression_rate || config.policy == Policy::vanilla) return std::nullopt;
  if (options.vanilla_mean_tokens) return options.vanilla_mean_tokens;
  if (!options.run_vanilla_baseline) {
    throw ConfigError("compression rate requested but no vanilla baseline is available");
  }
  return vanilla_mean_tokens(set, config, factory, options);
}

}  // namespace detail

inline EvalMetrics evaluate(const ProblemSet& set, const SessionConfig& config, const DriverFactory& factory,
                            const EvalOptions& options = {}) {
  config.validate();
  const auto baseline = detail::resolve_baseline(set, config, factory, options);
  const auto records = run_all(set, config, factory, options);
  const auto judge = options.judge();
  std::vector<ItemResult> rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    rows.push_back(make_item_result(set.items[i], config.policy, outcome_of(records[i]), judge));
  }
  return aggregate(config.policy, std::move(rows), baseline, options.numeric_equivalence);
}

enum class SweepAxis { tau, alpha, k };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::tau: return "tau";
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::k: return "k";
  }
  return "?";
}

inline std::optional<SweepAxis> parse_sweep_axis(std::string_view s) {
  if (s == "tau") return SweepAxis::tau;
  if (s == "alpha") return SweepAxis::alpha;
  if (s == "k") return SweepAxis::k;
  return std::nullopt;
}

inline WindowConfig with_axis(WindowConfig w, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::tau: w.tau = value; break;
    case SweepAxis::alpha: w.alpha = value; break;
    case SweepAxis::k:
      if (value < 1 || value != static_cast<double>(static_cast<std::size_t>(value))) {
        throw ValidationError("sweep: k must be a positive integer");
      }
      w.k = static_cast<std::size_t>(value);
      break;
  }
  w.validate();
  return w;
}

struct SweepRow {
  SweepAxis axis = SweepAxis::tau;
  double value = 0.0;
  EvalMetrics metrics;
  double delta_accuracy = 0.0;  // relative to the first value
};

// Exhaustive evidence, collected once per item, plus the vanilla baseline.
struct Recording {
  std::vector<SessionRecord> full;
  std::optional<double> vanilla_mean;
};

inline Recording record_set(const ProblemSet& set, const SessionConfig& config, const DriverFactory& factory,
                            const EvalOptions& options) {
  config.validate();
  SessionConfig base = config;
  base.policy = Policy::trace;
  Recording rec;
  rec.full = collect_all(set, base, factory, options);
  if (options.compression_rate) {
    rec.vanilla_mean = options.vanilla_mean_tokens ? options.vanilla_mean_tokens
                                                   : std::optional<double>(vanilla_mean_tokens(set, config, factory, options));
  }
  return rec;
}

inline EvalMetrics rescore_set(const ProblemSet& set, const Recording& rec, Policy policy, const WindowConfig& window,
                               Fallback fallback, const EvalOptions& options) {
  const auto judge = options.judge();
  std::vector<ItemResult> rows;
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    const auto o = rescore(rec.full[i], policy, window, fallback, set.items[i].gold, judge);
    rows.push_back(make_item_result(set.items[i], policy, o, judge));
  }
  return aggregate(policy, std::move(rows), rec.vanilla_mean, options.numeric_equivalence);
}

inline std::vector<SweepRow> sweep(const ProblemSet& set, SweepAxis axis, std::span<const double> values,
                                   const SessionConfig& config, const DriverFactory& factory,
                                   const EvalOptions& options = {}) {
  if (values.empty()) throw UsageError("sweep: no values given");
  std::vector<WindowConfig> windows;
  for (double v : values) windows.push_back(with_axis(config.window, axis, v));
  const auto rec = record_set(set, config, factory, options);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepRow row;
    row.axis = axis;
    row.value = values[i];
    row.metrics = rescore_set(set, rec, Policy::trace, windows[i], config.fallback, options);
    row.delta_accuracy = rows.empty() ? 0.0 : row.metrics.accuracy - rows.front().metrics.accuracy;
    rows.push_back(std::move(row));
  }
  return rows;
}

struct CurveRow {
  Policy policy = Policy::trace;
  double tau = 0.0;
  double mean_tokens = 0.0;
  double accuracy = 0.0;
};

inline std::vector<CurveRow> tradeoff_curve(const ProblemSet& set, std::span<const Policy> policies,
                                            std::span<const double> tau_values, const SessionConfig& config,
                                            const DriverFactory& factory, const EvalOptions& options = {}) {
  if (tau_values.empty()) throw UsageError("tradeoff curve: no tau values given");
  for (auto p : policies) {
    if (p != Policy::trace && p != Policy::single_step && p != Policy::oracle) {
      throw UsageError("tradeoff curve: unsupported policy '" + std::string(to_string(p)) + "'");
    }
  }
  EvalOptions no_cr = options;
  no_cr.compression_rate = false;
  const auto rec = record_set(set, config, factory, no_cr);
  std::vector<CurveRow> rows;
  for (auto p : policies) {
    for (double tau : tau_values) {
      const auto w = with_axis(config.window, SweepAxis::tau, tau);
      const auto m = rescore_set(set, rec, p, w, config.fallback, no_cr);
      rows.push_back({p, tau, m.mean_tokens, m.accuracy});
    }
  }
  return rows;
}

// Raw plotting data.
struct StepScoreRow {
  std::string record;
  std::size_t step = 0;
  std::string score_kind;  // "single_step_confidence" or "trace_stability"
  double value = 0.0;
  bool correct = false;
};

struct ConsistencyRow {
  std::string record;
  Policy policy = Policy::trace;
  double consistency = 0.0;
};

struct AnalysisExport {
  std::vector<StepScoreRow> step_rows;
  std::vector<ConsistencyRow> consistency_rows;
  std::size_t records_without_gold = 0;
  std::size_t steps_without_answer = 0;
};

// Fraction of the k-step window ending at the exit step that holds the final answer.
inline double exit_consistency(const SessionRecord& rec) {
  const std::size_t k = rec.config.window.k;
  if (!rec.decision.final_answer || rec.decision.step_index == 0) return 0.0;
  const std::size_t end = std::min(rec.decision.step_index, rec.steps.size());
  const std::size_t begin = end > k ? end - k : 0;
  std::size_t count = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& ev = rec.steps[i].evidence;
    if (ev && ev->answer && *ev->answer == *rec.decision.final_answer) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(k);
}

// Step rows need a gold label and an induced answer; others are counted and skipped.
// `ids` names the records in the output (defaults to their index).
inline AnalysisExport export_distributions(std::span<const SessionRecord> records,
                                           std::span<const std::string> ids = {},
                                           const AnswerJudge& judge = canonical_equal) {
  AnalysisExport out;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string id = r < ids.size() ? ids[r] : std::to_string(r);
    if (rec.config.policy != Policy::vanilla && rec.config.policy != Policy::fixed_budget) {
      out.consistency_rows.push_back({id, rec.config.policy, exit_consistency(rec)});
    }
    if (!rec.gold) {
      ++out.records_without_gold;
      continue;
    }
    for (const auto& s : rec.steps) {
      if (!s.evidence) continue;
      if (!s.evidence->answer) {
        ++out.steps_without_answer;
        continue;
      }
      const bool correct = judge(*s.evidence->answer, *rec.gold);
      out.step_rows.push_back({id, s.step.index, "single_step_confidence", s.evidence->confidence->value, correct});
      const double stab = s.report && s.report->selected_score() ? *s.report->selected_score() : 0.0;
      out.step_rows.push_back({id, s.step.index, "trace_stability", stab, correct});
    }
  }
  return out;
}

}  // namespace trace_exit

// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// trace-exit command-line tool: run, evaluate, sweep, curve, analyze, segment.
// Exit codes: 0 success, 1 session error, 2 configuration or input error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trace_exit/config.hpp"
#include "trace_exit/controller.hpp"
#include "trace_exit/harness.hpp"
#include "trace_exit/live_driver.hpp"
#include "trace_exit/replay.hpp"
#include "trace_exit/report.hpp"
#include "trace_exit/session_json.hpp"
#include "trace_exit/stepper.hpp"

namespace te = trace_exit;

namespace {

constexpr int kOk = 0;
constexpr int kSessionError = 1;
constexpr int kConfigError = 2;

struct Flags {
  std::string config_path;
  std::optional<std::string> policy;
  std::optional<double> tau;
  std::optional<double> alpha;
  std::optional<std::size_t> k;
  std::optional<std::string> profile;
  std::optional<std::string> endpoint;
  std::optional<std::string> model;
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> max_steps;
  std::optional<std::size_t> workers;
  std::optional<std::string> fallback;
  bool numeric = false;
  bool allow_partial = false;

  std::string replay;
  std::string record;
  std::string question;
  std::optional<std::string> gold;
  std::string out;
  std::string items_out;
  std::string set;
  std::string axis = "tau";
  std::vector<double> values;
  std::vector<std::string> policies;
  std::optional<double> vanilla_mean;
  bool no_cr = false;
  std::string export_kind = "distributions";
  std::string text_file;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--policy", f.policy, "trace | single_step | vanilla | fixed_budget | oracle");
  cmd->add_option("--tau", f.tau, "exit threshold");
  cmd->add_option("--alpha", f.alpha, "consistency weight");
  cmd->add_option("--k", f.k, "window size in steps");
  cmd->add_option("--profile", f.profile, "segmenter profile");
  cmd->add_option("--endpoint", f.endpoint, "OpenAI-compatible base URL, e.g. http://127.0.0.1:8000/v1");
  cmd->add_option("--model", f.model, "model name for --endpoint");
  cmd->add_option("--top-k", f.top_k, "candidates per token used for entropy");
  cmd->add_option("--max-steps", f.max_steps, "step budget per session");
  cmd->add_option("--fallback", f.fallback, "last_induced | best_score");
  cmd->add_option("--workers", f.workers, "parallel sessions");
  cmd->add_flag("--numeric-equivalence", f.numeric, "judge answers by rational value");
  cmd->add_flag("--allow-partial", f.allow_partial, "accept replay traces marked incomplete");
}

te::CliConfig resolve_config(const Flags& f) {
  te::CliConfig cfg;
  if (!f.config_path.empty()) cfg = te::load_config(f.config_path);
  auto& s = cfg.session;
  if (f.policy) {
    auto p = te::parse_policy(*f.policy);
    if (!p) throw te::ConfigError("unknown policy '" + *f.policy + "'");
    s.policy = *p;
  }
  if (f.fallback) {
    auto fb = te::parse_fallback(*f.fallback);
    if (!fb) throw te::ConfigError("unknown fallback '" + *f.fallback + "'");
    s.fallback = *fb;
  }
  if (f.tau) s.window.tau = *f.tau;
  if (f.alpha) s.window.alpha = *f.alpha;
  if (f.k) s.window.k = *f.k;
  if (f.profile) s.segmenter_profile = *f.profile;
  if (f.top_k) s.top_k = *f.top_k;
  if (f.max_steps) s.max_steps = *f.max_steps;
  if (f.workers) cfg.workers = *f.workers;
  if (f.numeric) cfg.numeric_equivalence = true;
  if (f.allow_partial) cfg.allow_partial = true;
  if (f.endpoint || f.model) {
    te::EndpointConfig ep = cfg.endpoint.value_or(te::EndpointConfig{});
    if (f.endpoint) ep.url = *f.endpoint;
    if (f.model) ep.model = *f.model;
    cfg.endpoint = ep;
  }
  if (cfg.endpoint && f.top_k) cfg.endpoint->top_logprobs = *f.top_k;
  cfg.resolve();
  return cfg;
}

te::ReplayLoadOptions load_options(const te::CliConfig& cfg) {
  return {cfg.session.segmenter, cfg.allow_partial};
}

te::DriverFactory make_factory(const te::CliConfig& cfg) {
  auto replay = te::replay_driver_factory(load_options(cfg));
  auto endpoint = cfg.endpoint;
  return [replay, endpoint](const te::ProblemItem& item) -> std::unique_ptr<te::ModelDriver> {
    if (item.replay_path || !endpoint) return replay(item);
    return std::make_unique<te::LiveDriver>(*endpoint);
  };
}

te::EvalOptions eval_options(const te::CliConfig& cfg, const Flags& f) {
  te::EvalOptions o;
  o.workers = cfg.workers;
  o.numeric_equivalence = cfg.numeric_equivalence;
  o.compression_rate = !f.no_cr;
  o.vanilla_mean_tokens = f.vanilla_mean;
  return o;
}

// Writes to `path`, or stdout when empty.
template <class Fn>
void emit(const std::string& path, Fn&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw te::IoError("cannot write " + path);
  write(out);
  if (!out) throw te::IoError("write failed: " + path);
}

bool wants_json(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
}

std::string summary_line(const te::SessionRecord& rec) {
  std::ostringstream os;
  os << "policy=" << te::to_string(rec.config.policy) << " exit_step=" << rec.decision.step_index
     << " early=" << (rec.decision.exited_early ? "yes" : "no") << " reason=" << te::to_string(rec.decision.reason)
     << " final_answer=" << rec.decision.final_answer.value_or("<none>") << " tokens=" << rec.total_tokens()
     << " (reasoning " << rec.reasoning_tokens << ", induction " << rec.induction_tokens << ")";
  if (rec.decision.trigger_score) os << " S=" << te::detail::num(*rec.decision.trigger_score);
  if (rec.error) os << " error=\"" << *rec.error << "\"";
  return os.str();
}

int cmd_run(const Flags& f) {
  const auto cfg = resolve_config(f);
  std::unique_ptr<te::ModelDriver> source;
  std::string question = f.question;
  std::optional<std::string> gold = f.gold ? std::optional<std::string>(te::canonicalize(*f.gold)) : std::nullopt;

  if (!f.replay.empty()) {
    auto trace = te::load_replay(f.replay, load_options(cfg));
    if (question.empty()) question = trace.question;
    if (!gold && trace.gold_answer) gold = te::canonicalize(*trace.gold_answer);
    source = std::make_unique<te::ReplayDriver>(std::move(trace));
  } else if (cfg.endpoint) {
    if (question.empty()) throw te::ConfigError("run: --question is required with a live endpoint");
    source = std::make_unique<te::LiveDriver>(*cfg.endpoint);
  } else {
    throw te::ConfigError("run: give --replay or --endpoint/--model");
  }
  if (cfg.session.policy == te::Policy::oracle && !gold) throw te::ConfigError("run: oracle policy needs --gold");
  const auto judge = cfg.numeric_equivalence ? te::AnswerJudge(te::numeric_equal) : te::AnswerJudge(te::canonical_equal);

  te::SessionRecord rec;
  if (!f.record.empty()) {
    // Record the whole stream with every step induced, then decide from the
    // recording so the same file also serves later offline sweeps.
    te::RecordingDriver recorder(*source);
    te::SessionConfig full = cfg.session;
    full.policy = te::Policy::trace;
    const auto collected = te::collect_evidence(recorder, question, full);
    if (collected.error) recorder.mark_incomplete();
    recorder.set_gold(gold);
    auto trace = te::record_session(recorder, f.record);
    std::cerr << "recorded " << trace.main_stream.size() << " tokens, " << trace.induction_responses.size()
              << " induction scripts to " << f.record << "\n";
    if (collected.error) {
      rec = collected;
    } else {
      te::ReplayDriver replay(std::move(trace));
      rec = te::run_session(replay, question, cfg.session, gold, judge);
    }
  } else {
    rec = te::run_session(*source, question, cfg.session, gold, judge);
  }

  if (!f.out.empty()) emit(f.out, [&](std::ostream& os) { os << te::to_json(rec).dump(2) << "\n"; });
  std::cout << summary_line(rec) << "\n";
  return rec.error ? kSessionError : kOk;
}

te::ProblemSet require_set(const Flags& f) {
  if (f.set.empty()) throw te::ConfigError("--set is required");
  try {
    return te::load_problem_set(f.set);
  } catch (const te::ValidationError& e) {
    throw te::ConfigError(e.what());
  }
}

int cmd_evaluate(const Flags& f) {
  const auto cfg = resolve_config(f);
  const auto set = require_set(f);
  const auto metrics = te::evaluate(set, cfg.session, make_factory(cfg), eval_options(cfg, f));
  const std::vector<te::EvalMetrics> rows{metrics};
  emit(f.out, [&](std::ostream& os) {
    if (wants_json(f.out)) {
      os << te::to_json(metrics).dump(2) << "\n";
    } else {
      te::write_metrics_csv(os, rows);
    }
  });
  if (!f.items_out.empty()) emit(f.items_out, [&](std::ostream& os) { te::write_items_csv(os, metrics.rows); });
  return metrics.errors > 0 ? kSessionError : kOk;
}

int cmd_sweep(const Flags& f) {
  const auto cfg = resolve_config(f);
  const auto set = require_set(f);
  const auto axis = te::parse_sweep_axis(f.axis);
  if (!axis) throw te::ConfigError("unknown sweep axis '" + f.axis + "' (tau, alpha, k)");
  const auto rows = te::sweep(set, *axis, f.values, cfg.session, make_factory(cfg), eval_options(cfg, f));
  emit(f.out, [&](std::ostream& os) {
    if (wants_json(f.out)) {
      os << te::to_json(std::span<const te::SweepRow>(rows)).dump(2) << "\n";
    } else {
      te::write_sweep_csv(os, rows);
    }
  });
  return kOk;
}

int cmd_curve(const Flags& f) {
  const auto cfg = resolve_config(f);
  const auto set = require_set(f);
  std::vector<te::Policy> policies;
  for (const auto& name : f.policies) {
    auto p = te::parse_policy(name);
    if (!p) throw te::ConfigError("unknown policy '" + name + "'");
    policies.push_back(*p);
  }
  if (policies.empty()) policies = {te::Policy::trace, te::Policy::single_step, te::Policy::oracle};
  const auto rows = te::tradeoff_curve(set, policies, f.values, cfg.session, make_factory(cfg), eval_options(cfg, f));
  emit(f.out, [&](std::ostream& os) {
    if (wants_json(f.out)) {
      os << te::to_json(std::span<const te::CurveRow>(rows)).dump(2) << "\n";
    } else {
      te::write_curve_csv(os, rows);
    }
  });
  return kOk;
}

int cmd_analyze(const Flags& f) {
  const auto cfg = resolve_config(f);
  const auto set = require_set(f);
  if (f.export_kind != "distributions" && f.export_kind != "consistency") {
    throw te::ConfigError("unknown export '" + f.export_kind + "' (distributions, consistency)");
  }
  const auto options = eval_options(cfg, f);
  const auto records = te::run_all(set, cfg.session, make_factory(cfg), options);
  std::vector<std::string> ids;
  for (const auto& it : set.items) ids.push_back(it.id);
  const auto ex = te::export_distributions(records, ids, options.judge());
  if (ex.records_without_gold > 0) {
    std::cerr << "warning: " << ex.records_without_gold << " record(s) without gold answers omitted\n";
  }
  emit(f.out, [&](std::ostream& os) {
    if (f.export_kind == "distributions") {
      te::write_distributions_csv(os, ex);
    } else {
      te::write_consistency_csv(os, ex);
    }
  });
  return kOk;
}

bool valid_utf8(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t n = 0;
    if (c == 0) return false;
    if (c >= 0x80) {
      if ((c >> 5) == 0x6) n = 1;
      else if ((c >> 4) == 0xE) n = 2;
      else if ((c >> 3) == 0x1E) n = 3;
      else return false;
    }
    if (n > s.size() - i - 1) return false;
    for (std::size_t k = 1; k <= n; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += n + 1;
  }
  return true;
}

int cmd_segment(const Flags& f) {
  te::CliConfig cfg;
  if (!f.config_path.empty()) cfg = te::load_config(f.config_path);
  const auto seg = cfg.profile(f.profile.value_or(cfg.session.segmenter_profile));
  std::ifstream in(f.text_file, std::ios::binary);
  if (!in) throw te::ConfigError("cannot open " + f.text_file);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!valid_utf8(text)) throw te::ConfigError(f.text_file + ": not UTF-8 text");
  const auto steps = te::offline_segment(text, seg);
  for (const auto& s : steps) {
    std::string preview = s.text.substr(0, 60);
    for (auto& c : preview) {
      if (c == '\n') c = ' ';
    }
    std::cout << s.index << "\t[" << s.char_range.begin << ", " << s.char_range.end << ")\tmarker="
              << (s.marker.empty() ? "-" : te::detail::ojson(s.marker).dump()) << "\t" << preview
              << (s.text.size() > 60 ? "..." : "") << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early exit for step-wise reasoning streams"};
  app.require_subcommand(1);
  Flags f;

  auto* run = app.add_subcommand("run", "run one session");
  add_common(run, f);
  run->add_option("--replay", f.replay, "replay trace (JSONL)");
  run->add_option("--record", f.record, "write a replay trace of this session");
  run->add_option("--question", f.question, "question text (live mode)");
  run->add_option("--gold", f.gold, "gold answer (oracle policy, records)");
  run->add_option("--out", f.out, "write the session record as JSON");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a policy over a problem set");
  add_common(evaluate, f);
  evaluate->add_option("--set", f.set, "problem set (JSONL)");
  evaluate->add_option("--out", f.out, "metrics file (.csv or .json); stdout if omitted");
  evaluate->add_option("--items-out", f.items_out, "per-item CSV");
  evaluate->add_option("--vanilla-mean", f.vanilla_mean, "cached vanilla mean tokens for CR");
  evaluate->add_flag("--no-cr", f.no_cr, "skip the compression rate");

  auto* sweep = app.add_subcommand("sweep", "re-score a set over tau, alpha or k");
  add_common(sweep, f);
  sweep->add_option("--set", f.set, "problem set (JSONL)");
  sweep->add_option("--axis", f.axis, "tau | alpha | k");
  sweep->add_option("--values", f.values, "comma-separated values")->delimiter(',')->required();
  sweep->add_option("--out", f.out, "output file (.csv or .json)");
  sweep->add_option("--vanilla-mean", f.vanilla_mean, "cached vanilla mean tokens for CR");
  sweep->add_flag("--no-cr", f.no_cr, "skip the compression rate");

  auto* curve = app.add_subcommand("curve", "accuracy/token trade-off rows per policy and tau");
  add_common(curve, f);
  curve->add_option("--set", f.set, "problem set (JSONL)");
  curve->add_option("--values", f.values, "comma-separated tau values")->delimiter(',')->required();
  curve->add_option("--policies", f.policies, "comma-separated policies")->delimiter(',');
  curve->add_option("--out", f.out, "output file (.csv or .json)");

  auto* analyze = app.add_subcommand("analyze", "export raw score data for plotting");
  add_common(analyze, f);
  analyze->add_option("--set", f.set, "problem set (JSONL)");
  analyze->add_option("--export", f.export_kind, "distributions | consistency");
  analyze->add_option("--out", f.out, "CSV output; stdout if omitted");

  auto* segment = app.add_subcommand("segment", "print the reasoning steps of a text file");
  segment->add_option("file", f.text_file, "text file")->required();
  segment->add_option("--profile", f.profile, "segmenter profile");
  segment->add_option("--config", f.config_path, "JSON config file with custom profiles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(f);
    if (*evaluate) return cmd_evaluate(f);
    if (*sweep) return cmd_sweep(f);
    if (*curve) return cmd_curve(f);
    if (*analyze) return cmd_analyze(f);
    if (*segment) return cmd_segment(f);
  } catch (const te::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const te::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const te::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSessionError;
  }
  return kOk;
}

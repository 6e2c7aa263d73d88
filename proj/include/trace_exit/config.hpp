// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// JSON configuration file. Layering is defaults < file < command-line flags;
// the CLI applies flags on top of what load_config returns and then calls
// resolve(). Format reference: docs/config.md.

#pragma once

#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "trace_exit/controller.hpp"
#include "trace_exit/errors.hpp"
#include "trace_exit/live_driver.hpp"
#include "trace_exit/stepper.hpp"

namespace trace_exit {

struct SegmenterOverrides {
  std::optional<std::size_t> scan_interval_tokens;
  std::optional<std::size_t> match_limit;
  std::optional<std::size_t> overlap_chars;
};

struct CliConfig {
  SessionConfig session;
  std::map<std::string, SegmenterConfig> custom_profiles;
  SegmenterOverrides segmenter_overrides;
  std::optional<EndpointConfig> endpoint;
  std::size_t workers = 1;
  bool numeric_equivalence = false;
  bool allow_partial = false;

  SegmenterConfig profile(const std::string& name) const {
    if (auto it = custom_profiles.find(name); it != custom_profiles.end()) return it->second;
    if (auto p = builtin_segmenter_profile(name)) return *p;
    throw ConfigError("unknown segmenter profile '" + name + "'");
  }

  // Fills session.segmenter from the selected profile plus overrides and validates everything.
  void resolve() {
    auto seg = profile(session.segmenter_profile);
    if (segmenter_overrides.scan_interval_tokens) seg.scan_interval_tokens = *segmenter_overrides.scan_interval_tokens;
    if (segmenter_overrides.match_limit) seg.match_limit = *segmenter_overrides.match_limit;
    if (segmenter_overrides.overlap_chars) seg.overlap_chars = segmenter_overrides.overlap_chars;
    session.segmenter = std::move(seg);
    if (workers < 1) throw ConfigError("harness: workers must be >= 1");
    try {
      session.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    if (endpoint) endpoint->validate();
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [k, _] : j.items()) {
    if (k == "api_key" || k == "apiKey" || k == "key" || k == "token") {
      throw ConfigError("config: '" + section + "." + k + "' is not allowed; pass secrets through the environment");
    }
    if (!allowed.count(k)) throw ConfigError("config: unknown key '" + section + "." + k + "'");
  }
}

template <class T>
void read_into(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void read_into(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline SegmenterConfig profile_from_json(const nlohmann::json& j, const std::string& name) {
  check_keys(j, "segmenter.profiles." + name, {"stop_tokens", "whole_word", "scan_interval_tokens", "match_limit"});
  SegmenterConfig cfg;
  read_into(j, "stop_tokens", cfg.stop_tokens);
  read_into(j, "whole_word", cfg.whole_word);
  read_into(j, "scan_interval_tokens", cfg.scan_interval_tokens);
  read_into(j, "match_limit", cfg.match_limit);
  return cfg;
}

}  // namespace detail

inline CliConfig config_from_json(const nlohmann::json& root, CliConfig cfg = {}) {
  using detail::read_into;
  try {
    detail::check_keys(root, "<root>", {"window", "segmenter", "induction", "session", "endpoint", "harness"});
    if (root.contains("window")) {
      const auto& w = root["window"];
      detail::check_keys(w, "window", {"k", "alpha", "tau"});
      read_into(w, "k", cfg.session.window.k);
      read_into(w, "alpha", cfg.session.window.alpha);
      read_into(w, "tau", cfg.session.window.tau);
    }
    if (root.contains("segmenter")) {
      const auto& s = root["segmenter"];
      detail::check_keys(s, "segmenter", {"profile", "profiles", "scan_interval_tokens", "match_limit", "overlap_chars"});
      read_into(s, "profile", cfg.session.segmenter_profile);
      if (s.contains("profiles")) {
        if (!s["profiles"].is_object()) throw ConfigError("config: 'segmenter.profiles' must be an object");
      }
      read_into(s, "scan_interval_tokens", cfg.segmenter_overrides.scan_interval_tokens);
      read_into(s, "match_limit", cfg.segmenter_overrides.match_limit);
      read_into(s, "overlap_chars", cfg.segmenter_overrides.overlap_chars);
    }
    if (root.contains("induction")) {
      const auto& i = root["induction"];
      detail::check_keys(i, "induction", {"template", "max_answer_tokens"});
      read_into(i, "template", cfg.session.prompt.template_text);
      read_into(i, "max_answer_tokens", cfg.session.prompt.max_answer_tokens);
    }
    if (root.contains("session")) {
      const auto& s = root["session"];
      detail::check_keys(s, "session",
                         {"policy", "max_steps", "max_total_tokens", "fallback", "top_k", "fixed_budget_tokens"});
      if (s.contains("policy")) {
        const auto name = s["policy"].get<std::string>();
        const auto p = parse_policy(name);
        if (!p) throw ConfigError("config: unknown policy '" + name + "'");
        cfg.session.policy = *p;
      }
      if (s.contains("fallback")) {
        const auto name = s["fallback"].get<std::string>();
        const auto f = parse_fallback(name);
        if (!f) throw ConfigError("config: unknown fallback '" + name + "'");
        cfg.session.fallback = *f;
      }
      read_into(s, "max_steps", cfg.session.max_steps);
      read_into(s, "max_total_tokens", cfg.session.max_total_tokens);
      read_into(s, "top_k", cfg.session.top_k);
      read_into(s, "fixed_budget_tokens", cfg.session.fixed_budget_tokens);
    }
    if (root.contains("endpoint")) {
      const auto& e = root["endpoint"];
      detail::check_keys(e, "endpoint",
                         {"url", "model", "api_key_env", "top_logprobs", "max_tokens", "temperature",
                          "connect_timeout_s", "read_timeout_s", "max_attempts", "backoff_initial_ms",
                          "backoff_max_ms", "queue_capacity", "induction_extra"});
      EndpointConfig ep = cfg.endpoint.value_or(EndpointConfig{});
      read_into(e, "url", ep.url);
      read_into(e, "model", ep.model);
      read_into(e, "api_key_env", ep.api_key_env);
      read_into(e, "top_logprobs", ep.top_logprobs);
      read_into(e, "max_tokens", ep.max_tokens);
      read_into(e, "temperature", ep.temperature);
      read_into(e, "connect_timeout_s", ep.connect_timeout_s);
      read_into(e, "read_timeout_s", ep.read_timeout_s);
      read_into(e, "max_attempts", ep.max_attempts);
      read_into(e, "backoff_initial_ms", ep.backoff_initial_ms);
      read_into(e, "backoff_max_ms", ep.backoff_max_ms);
      read_into(e, "queue_capacity", ep.queue_capacity);
      if (e.contains("induction_extra")) ep.induction_extra = e["induction_extra"];
      cfg.endpoint = ep;
    }
    if (root.contains("harness")) {
      const auto& h = root["harness"];
      detail::check_keys(h, "harness", {"workers", "numeric_equivalence", "allow_partial"});
      read_into(h, "workers", cfg.workers);
      read_into(h, "numeric_equivalence", cfg.numeric_equivalence);
      read_into(h, "allow_partial", cfg.allow_partial);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (root.contains("segmenter") && root["segmenter"].contains("profiles")) {
    for (const auto& [name, p] : root["segmenter"]["profiles"].items()) {
      try {
        cfg.custom_profiles[name] = detail::profile_from_json(p, name);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: segmenter.profiles." + name + ": " + e.what());
      }
    }
  }
  return cfg;
}

inline CliConfig load_config(const std::string& path, CliConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(root, std::move(base));
}

}  // namespace trace_exit

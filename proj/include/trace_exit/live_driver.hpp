// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// ModelDriver for OpenAI-compatible chat-completions endpoints that return
// token logprobs. The main stream is one streaming request read by a
// background thread into a bounded queue; induction is a separate
// non-streaming request that continues an assistant prefix.

#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "trace_exit/driver.hpp"
#include "trace_exit/errors.hpp"
#include "trace_exit/token.hpp"

namespace trace_exit {

struct EndpointConfig {
  std::string url;  // base URL up to and including the API prefix, e.g. http://127.0.0.1:8000/v1
  std::string model;
  std::string api_key_env = "TRACE_EXIT_API_KEY";
  std::size_t top_logprobs = 20;
  std::size_t max_tokens = 32768;
  std::optional<double> temperature;
  double connect_timeout_s = 10.0;
  double read_timeout_s = 300.0;
  std::size_t max_attempts = 4;
  std::size_t backoff_initial_ms = 500;
  std::size_t backoff_max_ms = 8000;
  std::size_t queue_capacity = 256;
  // Merged into every induction request body. The defaults ask vLLM-style
  // servers to continue the assistant message instead of opening a new turn.
  nlohmann::json induction_extra = {{"continue_final_message", true}, {"add_generation_prompt", false}};

  void validate() const {
    if (url.empty()) throw ConfigError("endpoint: url is required");
    if (model.empty()) throw ConfigError("endpoint: model is required");
    if (top_logprobs < 1 || top_logprobs > 20) throw ConfigError("endpoint: top_logprobs must be in [1, 20]");
    if (max_attempts < 1) throw ConfigError("endpoint: max_attempts must be >= 1");
    if (queue_capacity < 1) throw ConfigError("endpoint: queue_capacity must be >= 1");
    if (!induction_extra.is_object()) throw ConfigError("endpoint: induction_extra must be an object");
  }
};

namespace detail {

struct EndpointUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

inline EndpointUrl parse_endpoint_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ConfigError("endpoint: malformed url '" + url + "'");
  std::string prefix = m[2].matched ? m[2].str() : std::string();
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {m[1].str(), prefix};
}

[[noreturn]] inline void missing_logprobs() {
  throw ConfigError(
      "endpoint returned tokens without logprobs; the stability score needs per-token top_logprobs "
      "(request logprobs=true, top_logprobs=K)");
}

// One entry of choices[].logprobs.content.
inline TokenObservation observation_from_logprob_entry(const nlohmann::json& e, std::size_t top_k) {
  if (!e.contains("token") || !e.contains("logprob")) missing_logprobs();
  TokenObservation obs;
  obs.text = e.at("token").get<std::string>();
  const auto top = e.find("top_logprobs");
  if (top == e.end() || !top->is_array() || top->empty()) missing_logprobs();
  for (const auto& c : *top) {
    if (obs.top_candidates.size() == top_k) break;
    const auto lp = c.at("logprob");
    obs.top_candidates.push_back({c.at("token").get<std::string>(),
                                  probability_from_logprob(lp.is_number() ? lp.get<double>() : kLogprobFloor)});
  }
  const auto lp = e.at("logprob");
  normalize_candidates(obs, probability_from_logprob(lp.is_number() ? lp.get<double>() : kLogprobFloor));
  return obs;
}

// Tokens carried by one chat-completions choice (streamed chunk or full message).
inline std::vector<TokenObservation> observations_from_choice(const nlohmann::json& choice, std::size_t top_k) {
  std::vector<TokenObservation> out;
  const auto lp = choice.find("logprobs");
  const bool has_lp = lp != choice.end() && lp->is_object() && lp->contains("content") && (*lp)["content"].is_array();
  if (has_lp) {
    for (const auto& e : (*lp)["content"]) out.push_back(observation_from_logprob_entry(e, top_k));
    return out;
  }
  for (const char* key : {"delta", "message"}) {
    const auto d = choice.find(key);
    if (d == choice.end() || !d->is_object()) continue;
    for (const char* field : {"content", "reasoning_content"}) {
      const auto c = d->find(field);
      if (c != d->end() && c->is_string() && !c->get<std::string>().empty()) missing_logprobs();
    }
  }
  return out;
}

// Incremental server-sent-events reader. `on_data` receives each complete
// data payload; returning false stops parsing.
class SseParser {
 public:
  template <class Fn>
  bool feed(const char* data, std::size_t n, Fn&& on_data) {
    buffer_.append(data, n);
    std::size_t start = 0;
    for (;;) {
      const auto nl = buffer_.find('\n', start);
      if (nl == std::string::npos) break;
      std::string line = buffer_.substr(start, nl - start);
      start = nl + 1;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) {
        if (!pending_.empty()) {
          std::string payload = std::move(pending_);
          pending_.clear();
          if (!on_data(payload)) {
            buffer_.erase(0, start);
            return false;
          }
        }
        continue;
      }
      if (line.rfind("data:", 0) != 0) continue;
      std::string_view v(line);
      v.remove_prefix(5);
      if (!v.empty() && v.front() == ' ') v.remove_prefix(1);
      if (!pending_.empty()) pending_ += '\n';
      pending_ += v;
    }
    buffer_.erase(0, start);
    return true;
  }

  // Flushes a payload left without a terminating blank line.
  template <class Fn>
  void finish(Fn&& on_data) {
    if (!pending_.empty()) on_data(pending_);
    pending_.clear();
  }

 private:
  std::string buffer_;
  std::string pending_;
};

inline bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace detail

class LiveDriver final : public ModelDriver {
 public:
  explicit LiveDriver(EndpointConfig config) : config_(std::move(config)) {
    config_.validate();
    url_ = detail::parse_endpoint_url(config_.url);
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) api_key_ = key;
  }

  ~LiveDriver() override { cancel(); }

  LiveDriver(const LiveDriver&) = delete;
  LiveDriver& operator=(const LiveDriver&) = delete;

  void start(const std::string& question) override {
    cancel();
    stream_ = std::make_shared<Stream>();
    stream_->capacity = config_.queue_capacity;
    nlohmann::json body = base_body(question);
    body["stream"] = true;
    body["max_tokens"] = config_.max_tokens;
    if (config_.temperature) body["temperature"] = *config_.temperature;
    reader_ = std::thread([this, s = stream_, payload = body.dump()] { read_stream(s, payload); });
  }

  std::optional<TokenObservation> next_token() override {
    if (!stream_) throw UsageError("live driver: next_token() before start()");
    auto& s = *stream_;
    std::unique_lock lock(s.mu);
    s.cv.wait(lock, [&] { return !s.queue.empty() || s.done || s.cancelled; });
    if (s.cancelled) return std::nullopt;
    if (!s.queue.empty()) {
      auto tok = std::move(s.queue.front());
      s.queue.pop_front();
      tok.position = s.delivered++;
      s.cv.notify_all();
      return tok;
    }
    if (s.error) std::rethrow_exception(s.error);
    return std::nullopt;
  }

  void cancel() override {
    if (stream_) {
      {
        std::lock_guard lock(stream_->mu);
        stream_->cancelled = true;
        if (stream_->client) stream_->client->stop();
      }
      stream_->cv.notify_all();
    }
    if (reader_.joinable()) reader_.join();
  }

  InductionResponse induce(const InductionRequest& request) override {
    nlohmann::json body = base_body(request.question);
    body["messages"].push_back({{"role", "assistant"}, {"content", request.prompt_text}});
    body["max_tokens"] = request.max_answer_tokens;
    body["temperature"] = 0.0;
    body["stream"] = false;
    for (const auto& [k, v] : config_.induction_extra.items()) body[k] = v;
    const auto payload = body.dump();

    for (std::size_t attempt = 1;; ++attempt) {
      try {
        return induce_once(payload);
      } catch (const DriverError& e) {
        if (!e.retryable() || attempt >= config_.max_attempts) throw;
        backoff(attempt);
      }
    }
  }

  std::string name() const override { return "live:" + config_.model; }

  const EndpointConfig& config() const { return config_; }

 private:
  struct Stream {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<TokenObservation> queue;
    std::size_t capacity = 256;
    std::size_t received = 0;
    std::size_t delivered = 0;
    bool done = false;
    bool cancelled = false;
    std::exception_ptr error;
    httplib::Client* client = nullptr;
  };

  nlohmann::json base_body(const std::string& question) const {
    return {{"model", config_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", question}}})},
            {"logprobs", true},
            {"top_logprobs", config_.top_logprobs}};
  }

  std::unique_ptr<httplib::Client> make_client() const {
    auto cli = std::make_unique<httplib::Client>(url_.origin);
    const auto secs = [](double s) { return std::chrono::microseconds(static_cast<long long>(s * 1e6)); };
    cli->set_connection_timeout(secs(config_.connect_timeout_s));
    cli->set_read_timeout(secs(config_.read_timeout_s));
    cli->set_keep_alive(false);
    return cli;
  }

  httplib::Headers headers() const {
    httplib::Headers h{{"Accept", "text/event-stream, application/json"}};
    if (!api_key_.empty()) h.emplace("Authorization", "Bearer " + api_key_);
    return h;
  }

  void backoff(std::size_t attempt) const {
    const std::size_t shift = std::min<std::size_t>(attempt - 1, 20);
    const auto ms = std::min(config_.backoff_max_ms, config_.backoff_initial_ms << shift);
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  }

  // Retries only while nothing has been delivered; a stream that fails after
  // tokens were consumed cannot be resumed.
  void read_stream(const std::shared_ptr<Stream>& s, const std::string& payload) {
    std::exception_ptr failure;
    for (std::size_t attempt = 1;; ++attempt) {
      try {
        stream_once(s, payload);
        failure = nullptr;
        break;
      } catch (const DriverError& e) {
        failure = std::current_exception();
        bool fresh;
        {
          std::lock_guard lock(s->mu);
          fresh = s->received == 0 && !s->cancelled;
        }
        if (!e.retryable() || !fresh || attempt >= config_.max_attempts) break;
        backoff(attempt);
      } catch (...) {
        failure = std::current_exception();
        break;
      }
    }
    std::lock_guard lock(s->mu);
    s->done = true;
    if (!s->cancelled) s->error = failure;
    s->cv.notify_all();
  }

  void stream_once(const std::shared_ptr<Stream>& s, const std::string& payload) {
    auto cli = make_client();
    {
      std::lock_guard lock(s->mu);
      if (s->cancelled) return;
      s->client = cli.get();
    }
    struct Unregister {
      Stream& s;
      ~Unregister() {
        std::lock_guard lock(s.mu);
        s.client = nullptr;
      }
    } unregister{*s};

    detail::SseParser sse;
    int status = 0;
    std::string error_body;
    std::exception_ptr parse_failure;
    bool finished = false;

    const auto on_data = [&](const std::string& data) -> bool {
      if (data == "[DONE]") {
        finished = true;
        return false;
      }
      try {
        const auto j = nlohmann::json::parse(data);
        if (j.contains("error")) {
          throw DriverError("endpoint error: " + j["error"].dump(), false);
        }
        std::vector<TokenObservation> toks;
        for (const auto& choice : j.value("choices", nlohmann::json::array())) {
          auto part = detail::observations_from_choice(choice, config_.top_logprobs);
          std::move(part.begin(), part.end(), std::back_inserter(toks));
        }
        std::unique_lock lock(s->mu);
        for (auto& t : toks) {
          s->cv.wait(lock, [&] { return s->queue.size() < s->capacity || s->cancelled; });
          if (s->cancelled) return false;
          s->queue.push_back(std::move(t));
          ++s->received;
          s->cv.notify_all();
        }
        return true;
      } catch (...) {
        parse_failure = std::current_exception();
        return false;
      }
    };

    httplib::Request req;
    req.method = "POST";
    req.path = url_.prefix + "/chat/completions";
    req.headers = headers();
    req.body = payload;
    req.set_header("Content-Type", "application/json");
    req.response_handler = [&](const httplib::Response& res) {
      status = res.status;
      return true;
    };
    req.content_receiver = [&](const char* data, std::size_t n, uint64_t, uint64_t) {
      if (status != 200) {
        error_body.append(data, std::min<std::size_t>(n, 2048 - std::min<std::size_t>(error_body.size(), 2048)));
        return true;
      }
      return sse.feed(data, n, on_data);
    };

    httplib::Response res;
    httplib::Error err = httplib::Error::Success;
    const bool ok = cli->send(req, res, err);
    {
      std::lock_guard lock(s->mu);
      if (s->cancelled) return;
    }
    if (parse_failure) std::rethrow_exception(parse_failure);
    if (finished) return;
    if (status != 0 && status != 200) {
      throw DriverError("main stream: HTTP " + std::to_string(status) + ": " + error_body,
                        detail::retryable_status(status));
    }
    if (!ok && err != httplib::Error::Canceled) {
      throw DriverError("main stream: " + httplib::to_string(err), true);
    }
    sse.finish(on_data);
    if (parse_failure) std::rethrow_exception(parse_failure);
  }

  InductionResponse induce_once(const std::string& payload) const {
    auto cli = make_client();
    auto hdrs = headers();
    auto res = cli->Post(url_.prefix + "/chat/completions", hdrs, payload, "application/json");
    if (!res) throw DriverError("induction: " + httplib::to_string(res.error()), true);
    if (res->status != 200) {
      throw DriverError("induction: HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 2048),
                        detail::retryable_status(res->status));
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw DriverError(std::string("induction: malformed response: ") + e.what(), true);
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
      throw DriverError("induction: response has no choices", false);
    }
    const auto& choice = j["choices"][0];
    InductionResponse out;
    out.tokens = detail::observations_from_choice(choice, config_.top_logprobs);
    for (std::size_t i = 0; i < out.tokens.size(); ++i) {
      out.tokens[i].position = i;
      out.text += out.tokens[i].text;
    }
    if (out.tokens.empty()) {
      const auto& msg = choice.value("message", nlohmann::json::object());
      if (msg.contains("content") && msg["content"].is_string()) out.text = msg["content"].get<std::string>();
      if (!out.text.empty()) detail::missing_logprobs();
    }
    return out;
  }

  EndpointConfig config_;
  detail::EndpointUrl url_;
  std::string api_key_;
  std::shared_ptr<Stream> stream_;
  std::thread reader_;
};

}  // namespace trace_exit

// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "trace_exit/token.hpp"

namespace trace_exit {

struct InductionRequest {
  std::size_t step_index = 0;
  std::string question;
  std::string reasoning;    // accumulated reasoning through the end of the step
  std::string prompt_text;  // reasoning rendered into the induction template
  std::size_t max_answer_tokens = 32;
};

// Raw auxiliary generation: its text and the generated tokens with candidates.
struct InductionResponse {
  std::string text;
  std::vector<TokenObservation> tokens;

  bool operator==(const InductionResponse&) const = default;
};

// Model access used by the session loop. A session starts one main stream,
// pulls tokens from it, and between steps issues induction requests. Calls come
// from one thread and never overlap, though a driver may keep reading its main
// stream in the background while an induction request runs.
class ModelDriver {
 public:
  virtual ~ModelDriver() = default;

  virtual void start(const std::string& question) = 0;

  // Next token of the main stream, or nullopt at end of generation or after cancel().
  virtual std::optional<TokenObservation> next_token() = 0;

  // Stops the main stream. Nothing is delivered by next_token() afterwards.
  virtual void cancel() = 0;

  virtual InductionResponse induce(const InductionRequest& request) = 0;

  virtual std::string name() const = 0;
};

}  // namespace trace_exit

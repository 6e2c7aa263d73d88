// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "support.hpp"
#include "trace_exit/replay.hpp"

namespace {

using namespace trace_exit;

const char* kHeader =
    R"({"format":"trace-exit-replay","version":1,"question":"Q","gold":"5","complete":true,"stream_end":"natural","coverage":"full"})";

std::string three_tokens() {
  return std::string(kHeader) + "\n" +
         R"({"kind":"token","text":"Think","top":[["Think",0.9],["So",0.1]]})" "\n"
         R"({"kind":"token","text":" hard","top":[[" hard",0.7],[" more",0.3]]})" "\n"
         R"({"kind":"token","text":".","top":[[".",1.0]]})" "\n"
         R"({"kind":"induction","step":1,"text":"5}","tokens":[{"text":"5","top":[["5",0.8],["6",0.2]]},{"text":"}","top":[["}",1.0]]}]})" "\n";
}

ReplayLoadOptions checked() { return ReplayLoadOptions{default_segmenter_profile(), false}; }

TEST(Replay, ThreeTokenTrace) {
  std::istringstream in(three_tokens());
  ReplayDriver d(parse_replay(in, checked()));
  EXPECT_EQ(d.trace().question, "Q");
  EXPECT_EQ(d.trace().gold_answer, "5");
  d.start("Q");
  std::string text;
  std::size_t n = 0;
  while (auto t = d.next_token()) {
    EXPECT_EQ(t->position, n++);
    text += t->text;
  }
  EXPECT_EQ(n, 3u);
  EXPECT_EQ(text, "Think hard.");
  EXPECT_FALSE(d.next_token());
  const auto resp = d.induce(InductionRequest{1, "Q", text, text, 32});
  EXPECT_EQ(resp.text, "5}");
  ASSERT_EQ(resp.tokens.size(), 2u);
  EXPECT_DOUBLE_EQ(resp.tokens[0].top_candidates[1].probability, 0.2);
}

TEST(Replay, ResetReplaysIdentically) {
  std::istringstream in(three_tokens());
  ReplayDriver d(parse_replay(in));
  auto drain = [&] {
    std::vector<TokenObservation> out;
    d.start("Q");
    while (auto t = d.next_token()) out.push_back(*t);
    return out;
  };
  const auto first = drain();
  d.start("Q");
  d.next_token();
  d.cancel();
  EXPECT_FALSE(d.next_token());
  EXPECT_EQ(drain(), first);
}

TEST(Replay, MissingInductionForStepIsNamed) {
  auto t = te_test::make_trace(te_test::steps_for({"1", "2", "3"}, {0.9, 0.9, 0.9}));
  t.induction_responses.erase(2);
  std::ostringstream out;
  write_replay(out, t);
  std::istringstream in(out.str());
  try {
    parse_replay(in, checked());
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
  // Without a segmenter the check is skipped and the driver fails at that step instead.
  std::istringstream in2(out.str());
  ReplayDriver d(parse_replay(in2));
  try {
    d.induce(InductionRequest{2, "", "x", "x", 32});
    FAIL() << "expected DriverError";
  } catch (const DriverError& e) {
    EXPECT_EQ(e.step(), 2);
    EXPECT_FALSE(e.retryable());
  }
}

TEST(Replay, ScriptBeyondLastStepIsRejected) {
  auto t = te_test::make_trace(te_test::steps_for({"1", "2"}, {0.9, 0.9}));
  t.induction_responses[3] = te_test::scripted_reply(std::string("3"), 0.9);
  std::ostringstream out;
  write_replay(out, t);
  std::istringstream in(out.str());
  EXPECT_THROW(parse_replay(in, checked()), ValidationError);
}

TEST(Replay, CancelledStreamNeedNotScriptItsLastStep) {
  auto t = te_test::make_trace(te_test::steps_for({"1", "2", "3"}, {0.9, 0.9, 0.9}));
  t.induction_responses.erase(3);
  t.stream_end = StreamEnd::cancelled;
  std::ostringstream out;
  write_replay(out, t);
  std::istringstream in(out.str());
  EXPECT_NO_THROW(parse_replay(in, checked()));
}

std::size_t format_error_line(const std::string& content) {
  std::istringstream in(content);
  try {
    parse_replay(in);
  } catch (const FormatError& e) {
    return e.line();
  }
  return 0;
}

TEST(Replay, FormatErrorsCarryLineNumbers) {
  const std::string good = three_tokens();
  EXPECT_EQ(format_error_line(good + "{not json\n"), 6u);
  EXPECT_EQ(format_error_line(good + "[1,2]\n"), 6u);
  EXPECT_EQ(format_error_line(good + R"({"kind":"mystery"})" "\n"), 6u);
  EXPECT_EQ(format_error_line(std::string(kHeader) + "\n" + R"({"kind":"token","text":"a"})" "\n"), 2u);
  EXPECT_EQ(format_error_line(std::string(kHeader) + "\n" + R"({"kind":"token","text":"a","top":[["b",0.9]]})" "\n"),
            2u);  // chosen token missing from candidates
  EXPECT_EQ(format_error_line(std::string(kHeader) + "\n\n" + R"({"kind":"token","text":"a","top":[["a",0.2],["b",0.7]]})" "\n"),
            3u);  // not sorted
  EXPECT_EQ(format_error_line(std::string(kHeader) + "\n" + R"({"kind":"induction","step":0})" "\n"), 2u);
  EXPECT_EQ(format_error_line(good + R"({"kind":"induction","step":1,"text":"x"})" "\n"), 6u);
  EXPECT_EQ(format_error_line(R"({"kind":"token","text":"a","top":[["a",1.0]]})" "\n"), 1u);
  EXPECT_EQ(format_error_line(R"({"format":"trace-exit-replay","version":2})" "\n"), 1u);
  std::istringstream empty("");
  EXPECT_THROW(parse_replay(empty), FormatError);
}

TEST(Replay, LoadReportsPathAndLine) {
  const auto path = std::filesystem::temp_directory_path() / "trace_exit_bad_replay.jsonl";
  {
    std::ofstream out(path);
    out << three_tokens() << "garbage\n";
  }
  try {
    load_replay(path.string());
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(path.string()), std::string::npos);
    EXPECT_NE(what.find("line 6"), std::string::npos);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_replay("/nonexistent/trace.jsonl"), IoError);
}

TEST(Replay, PartialTracesNeedOptIn) {
  auto t = te_test::make_trace(te_test::steps_for({"1", "2"}, {0.9, 0.9}));
  t.complete = false;
  std::ostringstream out;
  write_replay(out, t);
  std::istringstream in(out.str());
  EXPECT_THROW(parse_replay(in), ValidationError);
  std::istringstream in2(out.str());
  EXPECT_FALSE(parse_replay(in2, ReplayLoadOptions{std::nullopt, true}).complete);
}

TEST(Replay, RoundTrip) {
  for (const char* name : {"fig11.jsonl", "stable_early.jsonl", "no_exit.jsonl"}) {
    const auto original = load_replay(te_test::fixture(name), checked());
    std::ostringstream once;
    write_replay(once, original);
    std::istringstream in(once.str());
    const auto reloaded = parse_replay(in, checked());
    EXPECT_EQ(reloaded.main_stream, original.main_stream) << name;
    EXPECT_EQ(reloaded.induction_responses, original.induction_responses) << name;
    EXPECT_EQ(reloaded.gold_answer, original.gold_answer);
    std::ostringstream twice;
    write_replay(twice, reloaded);
    EXPECT_EQ(twice.str(), once.str()) << name;
  }
}

TEST(RecordingDriver, CapturesWhatItForwards) {
  const auto source = load_replay(te_test::fixture("fig11.jsonl"));
  ReplayDriver inner(source);
  RecordingDriver rec(inner);
  rec.start(source.question);
  for (int i = 0; i < 10; ++i) rec.next_token();
  rec.induce(InductionRequest{1, source.question, "x", "x", 32});
  rec.cancel();
  const auto& t = rec.trace();
  EXPECT_EQ(t.question, source.question);
  ASSERT_EQ(t.main_stream.size(), 10u);
  EXPECT_EQ(t.main_stream[9], source.main_stream[9]);
  EXPECT_EQ(t.induction_responses.at(1), source.induction_responses.at(1));
  EXPECT_EQ(t.stream_end, StreamEnd::cancelled);
  EXPECT_EQ(t.coverage, ScriptCoverage::recorded);
  EXPECT_TRUE(t.complete);
  EXPECT_THROW(rec.induce(InductionRequest{99, "", "x", "x", 32}), DriverError);
  EXPECT_FALSE(rec.trace().complete);
}

}  // namespace

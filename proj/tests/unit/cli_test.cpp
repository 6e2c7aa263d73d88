// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the trace-exit binary end to end.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support.hpp"

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("trace_exit_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::vector<std::string>& args) {
    std::string cmd = quote(TRACE_EXIT_CLI);
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " >" + quote((dir_ / "stdout").string()) + " 2>" + quote((dir_ / "stderr").string());
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir_ / "stdout");
    r.err = slurp(dir_ / "stderr");
    return r;
  }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

TEST_F(CliTest, RunTraceOnReplay) {
  const auto r = run({"run", "--replay", te_test::fixture("fig11.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("policy=trace exit_step=7 early=yes reason=threshold final_answer=1997/2"), std::string::npos)
      << r.out;
  EXPECT_NE(r.out.find("S=0.845"), std::string::npos) << r.out;
}

TEST_F(CliTest, RunSingleStepOnReplay) {
  const auto r = run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--policy", "single_step"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("exit_step=3"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("final_answer=998"), std::string::npos) << r.out;
}

TEST_F(CliTest, RunWritesSessionJson) {
  const auto r = run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--policy", "oracle", "--out",
                      path("rec.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(path("rec.json")));
  EXPECT_EQ(j["decision"]["step_index"], 4);
  EXPECT_EQ(j["decision"]["final_answer"], "1997/2");
}

TEST_F(CliTest, RecordThenReplayGivesTheSameDecision) {
  const auto rec = run({"run", "--replay", te_test::fixture("stable_early.jsonl"), "--record", path("rec.jsonl")});
  ASSERT_EQ(rec.code, 0) << rec.err;
  EXPECT_NE(rec.err.find("recorded"), std::string::npos);
  const auto again = run({"run", "--replay", path("rec.jsonl")});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(lines(again.out), lines(rec.out));
  EXPECT_NE(again.out.find("exit_step=5"), std::string::npos) << again.out;
}

TEST_F(CliTest, MissingReplayIsAConfigError) {
  const auto r = run({"run", "--replay", path("nope.jsonl")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(path("nope.jsonl")), std::string::npos) << r.err;
}

TEST_F(CliTest, RunWithoutSourceIsAConfigError) {
  const auto r = run({"run"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--replay"), std::string::npos);
}

TEST_F(CliTest, OracleNeedsGold) {
  {
    std::ofstream out(path("nogold.jsonl"));
    std::ifstream in(te_test::fixture("fig11.jsonl"));
    std::string header;
    std::getline(in, header);
    auto j = nlohmann::json::parse(header);
    j.erase("gold");
    out << j.dump() << "\n" << in.rdbuf();
  }
  EXPECT_EQ(run({"run", "--replay", path("nogold.jsonl"), "--policy", "oracle"}).code, 2);
  EXPECT_EQ(run({"run", "--replay", path("nogold.jsonl"), "--policy", "oracle", "--gold", "1997/2"}).code, 0);
}

TEST_F(CliTest, BadFlagValues) {
  EXPECT_EQ(run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--policy", "greedy"}).code, 2);
  EXPECT_EQ(run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--tau", "1.5"}).code, 2);
  EXPECT_EQ(run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--profile", "nope"}).code, 2);
  EXPECT_EQ(run({"run", "--bogus"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST_F(CliTest, ConfigFileRejectsSecrets) {
  {
    std::ofstream out(path("cfg.json"));
    out << R"({"endpoint": {"url": "http://127.0.0.1:1/v1", "model": "m", "api_key": "sk-x"}})";
  }
  const auto r = run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--config", path("cfg.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("environment"), std::string::npos) << r.err;
}

TEST_F(CliTest, ConfigFileAndFlagsLayer) {
  {
    std::ofstream out(path("cfg.json"));
    out << R"({"window": {"tau": 0.93}, "session": {"policy": "single_step"}})";
  }
  // Config gives single_step at 0.93 (first step with c >= 0.93 is step 4); the flag restores tau 0.8.
  const auto from_file = run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--config", path("cfg.json")});
  EXPECT_NE(from_file.out.find("exit_step=4"), std::string::npos) << from_file.out;
  const auto layered =
      run({"run", "--replay", te_test::fixture("fig11.jsonl"), "--config", path("cfg.json"), "--tau", "0.8"});
  EXPECT_NE(layered.out.find("exit_step=3"), std::string::npos) << layered.out;
}

TEST_F(CliTest, EvaluateCsv) {
  const auto r = run({"evaluate", "--set", te_test::fixture("set.jsonl"), "--items-out", path("items.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 2u);
  EXPECT_EQ(ls[0],
            "policy,items,accuracy,mean_tokens,compression_rate,induction_ratio,mean_reasoning_tokens,"
            "mean_induction_tokens,errors,numeric_equivalence");
  EXPECT_EQ(ls[1].rfind("trace,20,", 0), 0u) << ls[1];
  EXPECT_EQ(lines(slurp(path("items.csv"))).size(), 21u);
}

TEST_F(CliTest, EvaluateJson) {
  const auto r = run({"evaluate", "--set", te_test::fixture("set.jsonl"), "--policy", "vanilla", "--out",
                      path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(path("m.json")));
  EXPECT_EQ(j["policy"], "vanilla");
  EXPECT_EQ(j["compression_rate"], 1.0);
  EXPECT_EQ(j["items"], 20);
}

TEST_F(CliTest, EvaluateNoCompressionRate) {
  const auto r = run({"evaluate", "--set", te_test::fixture("set.jsonl"), "--no-cr"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 2u);
  // compression_rate column is empty
  EXPECT_NE(ls[1].find(",,"), std::string::npos) << ls[1];
}

TEST_F(CliTest, SweepThreeValues) {
  const auto r = run({"sweep", "--set", te_test::fixture("set.jsonl"), "--axis", "tau", "--values", "0.6,0.8,0.9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 4u);
  EXPECT_EQ(ls[0].rfind("axis,value,accuracy,delta_accuracy", 0), 0u) << ls[0];
  EXPECT_EQ(ls[1].rfind("tau,0.6,", 0), 0u) << ls[1];
  EXPECT_EQ(ls[3].rfind("tau,0.9,", 0), 0u) << ls[3];
}

TEST_F(CliTest, SweepErrors) {
  EXPECT_EQ(run({"sweep", "--set", te_test::fixture("set.jsonl"), "--axis", "beta", "--values", "1"}).code, 2);
  EXPECT_EQ(run({"sweep", "--set", te_test::fixture("set.jsonl"), "--axis", "k", "--values", "2.5"}).code, 2);
  EXPECT_EQ(run({"sweep", "--set", te_test::fixture("set.jsonl"), "--axis", "tau"}).code, 2);
  EXPECT_EQ(run({"sweep", "--axis", "tau", "--values", "0.5"}).code, 2);
}

TEST_F(CliTest, CurveRows) {
  const auto r = run({"curve", "--set", te_test::fixture("set.jsonl"), "--values", "0.7,0.9", "--policies",
                      "trace,single_step"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out).size(), 5u);
}

TEST_F(CliTest, AnalyzeExports) {
  const auto d = run({"analyze", "--set", te_test::fixture("set.jsonl"), "--export", "distributions", "--policy",
                      "vanilla"});
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(lines(d.out).size(), 1u);  // vanilla induces nothing: header only
  const auto c = run({"analyze", "--set", te_test::fixture("set.jsonl"), "--export", "consistency"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(lines(c.out).size(), 21u);
  const auto s = run({"analyze", "--set", te_test::fixture("set.jsonl"), "--export", "distributions"});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_GT(lines(s.out).size(), 40u);
  EXPECT_EQ(run({"analyze", "--set", te_test::fixture("set.jsonl"), "--export", "plots"}).code, 2);
}

TEST_F(CliTest, SegmentTwoMarkers) {
  {
    std::ofstream out(path("t.txt"));
    out << "First idea. Wait, second idea. Wait, third idea.";
  }
  const auto r = run({"segment", path("t.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(ls[0].rfind("1\t[0, 12)\tmarker=-\t", 0), 0u) << ls[0];
  EXPECT_EQ(ls[1].rfind("2\t[12, 31)\tmarker=\"Wait\"\t", 0), 0u) << ls[1];
}

TEST_F(CliTest, SegmentCaseStudy) {
  const auto r = run({"segment", te_test::fixture("case_study.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out).size(), 6u);
}

TEST_F(CliTest, SegmentGeminiProfile) {
  {
    std::ofstream out(path("g.txt"));
    out << "A.\n\nB.\n\nC.";
  }
  const auto r = run({"segment", path("g.txt"), "--profile", "gemini"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out).size(), 3u);
}

TEST_F(CliTest, SegmentRejectsBinaryAndUnknownProfile) {
  {
    std::ofstream out(path("bin.dat"), std::ios::binary);
    const char bytes[] = {'\x7f', 'E', 'L', 'F', '\0', '\xff', '\xfe'};
    out.write(bytes, sizeof bytes);
  }
  const auto r = run({"segment", path("bin.dat")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("UTF-8"), std::string::npos) << r.err;
  EXPECT_EQ(run({"segment", te_test::fixture("case_study.txt"), "--profile", "nope"}).code, 2);
  EXPECT_EQ(run({"segment", path("missing.txt")}).code, 2);
}

}  // namespace

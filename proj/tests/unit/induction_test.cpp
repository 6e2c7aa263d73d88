// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <string>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"
#include "trace_exit/induction.hpp"

namespace {

using namespace trace_exit;

struct CanonCase {
  const char* input;
  const char* expected;
};

const CanonCase kCanonTable[] = {
    {"42", "42"},
    {" 42 ", "42"},
    {"+007", "7"},
    {"-00.25", "-0.25"},
    {".5", "0.5"},
    {"0.5", "0.5"},
    {"1/2", "1/2"},
    {"\\frac{1}{2}", "1/2"},
    {"\\dfrac{1997}{2}", "1997/2"},
    {"\\tfrac{3}{4}", "3/4"},
    {"\\frac{1997}{2}", "1997/2"},
    {"\\boxed{12}", "12"},
    {"\\boxed{\\boxed{12}}", "12"},
    {"$12$", "12"},
    {"$$12$$", "12"},
    {"\\(12\\)", "12"},
    {"\\[12\\]", "12"},
    {"\\text{12}", "12"},
    {"\\mathrm{C}", "C"},
    {"\\textbf{(B)}", "B"},
    {"(c)", "C"},
    {"c", "C"},
    {"D", "D"},
    {"(K)", "(K)"},
    {"12.", "12"},
    {"12,", "12"},
    {"x  +   1", "x + 1"},
    {"\\left(1, 2\\right)", "(1, 2)"},
    {"\\leftarrow", "\\leftarrow"},
    {"3\\,000", "3000"},
    {"\\frac{a+b}{2}", "(a+b)/2"},
    {"\\frac{-1}{2}", "-1/2"},
    {"\\frac{\\frac{1}{2}}{3}", "(1/2)/3"},
    {"1 / 2", "1/2"},
    {"007/002", "7/2"},
    {"\\sqrt{2}", "\\sqrt{2}"},
    {"2\\sqrt{3}", "2\\sqrt{3}"},
    {"", ""},
    {"   ", ""},
    {"\\boxed{ \\frac{1997}{2} }.", "1997/2"},
    {"$\\boxed{5}$", "5"},
    {"-5", "-5"},
    {"+5", "5"},
    {"5.0", "5.0"},
    {"000", "0"},
    {"\\!12", "12"},
    {"x^2 + 1", "x^2 + 1"},
    {"\\text{(a)}", "A"},
    {"\\frac12", "\\frac12"},
    {"1/2/3", "1/2/3"},
    {"\\pi", "\\pi"},
};

TEST(Canonicalize, Table) {
  for (const auto& c : kCanonTable) {
    EXPECT_EQ(canonicalize(c.input), c.expected) << "input: " << c.input;
  }
}

TEST(Canonicalize, DecimalAndFractionStayDistinct) {
  EXPECT_NE(canonicalize("0.5"), canonicalize("1/2"));
  EXPECT_NE(canonicalize("5"), canonicalize("5.0"));
  EXPECT_EQ(canonicalize("\\frac{1}{2}"), canonicalize("1/2"));
}

TEST(Canonicalize, Idempotent) {
  for (const auto& c : kCanonTable) {
    const auto once = canonicalize(c.input);
    EXPECT_EQ(canonicalize(once), once) << "input: " << c.input;
  }
  const std::vector<std::string> pieces = {"\\frac", "{", "}", "1", "2", "-", "+", ".", " ", "$", "\\boxed",
                                           "(", ")", "a", "C", "/", "\\left", "\\right", "\\,", "0", "\\text"};
  std::mt19937 rng(5);
  for (int iter = 0; iter < 2000; ++iter) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 10);
    for (int i = 0; i < n; ++i) s += pieces[rng() % pieces.size()];
    const auto once = canonicalize(s);
    EXPECT_EQ(canonicalize(once), once) << "input: " << s;
  }
}

TEST(ParseAnswer, Examples) {
  EXPECT_EQ(parse_answer("so \\boxed{3} no wait \\boxed{5}"), "5");
  EXPECT_EQ(parse_answer("The answer is 1997/2."), "1997/2");
  EXPECT_EQ(parse_answer("sum is 998.5 = 1997/2"), "1997/2");
  EXPECT_EQ(parse_answer("Final: \\boxed{\\frac{1}{2}}."), "1/2");
  EXPECT_EQ(parse_answer("Answer: (b)"), "B");
  EXPECT_EQ(parse_answer("Let us think about the problem some more."), std::nullopt);
  EXPECT_EQ(parse_answer(""), std::nullopt);
  EXPECT_EQ(parse_answer("\\boxed{}"), std::nullopt);
}

TEST(ParseAnswer, UnbalancedBoxFallsBackToText) {
  EXPECT_EQ(parse_answer("\\boxed{3"), std::nullopt);
  EXPECT_EQ(parse_answer("\\boxed{3 and the answer is 4"), "4");
  EXPECT_EQ(parse_answer("earlier \\boxed{7} then \\boxed{8"), "7");
}

TEST(ParseAnswer, FallbackLooksOnlyAtTheLastLineOfTheTail) {
  EXPECT_EQ(parse_answer("The answer is 5.\nBut let me reconsider this."), std::nullopt);
  std::string text = "The answer is 5. " + std::string(300, 'x');
  EXPECT_EQ(parse_answer(text), std::nullopt);
  EXPECT_EQ(parse_answer("x = " + std::string(60, '9')), std::nullopt);  // too long to be an answer
}

TEST(ParseAnswer, NeverThrowsOnRandomBytes) {
  std::mt19937 rng(9);
  for (int iter = 0; iter < 3000; ++iter) {
    std::string s(rng() % 64, '\0');
    for (auto& ch : s) ch = static_cast<char>(rng() % 256);
    if (iter % 3 == 0) s = "\\boxed{" + s;
    EXPECT_NO_THROW((void)parse_answer(s));
  }
}

TEST(InductionPrompt, Validation) {
  InductionPrompt p;
  EXPECT_NO_THROW(p.validate());
  EXPECT_TRUE(p.opens_box());
  p.template_text = "no slot";
  EXPECT_THROW(p.validate(), ValidationError);
  p.template_text = "{reasoning}{reasoning}";
  EXPECT_THROW(p.validate(), ValidationError);
  p.template_text = "{reasoning} Answer:";
  EXPECT_NO_THROW(p.validate());
  EXPECT_FALSE(p.opens_box());
  p.max_answer_tokens = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  EXPECT_EQ(InductionPrompt{}.render("R"), "R\n\nWe can get the question's Final Answer: \\boxed{");
}

TEST(InterpretInduction, OpenBoxReply) {
  const auto reply = te_test::scripted_reply(std::string("1997/2"), 0.95);
  const auto induced = interpret_induction(reply, InductionPrompt{}, 20);
  ASSERT_TRUE(induced.canonical);
  EXPECT_EQ(*induced.canonical, "1997/2");
  EXPECT_EQ(induced.distributions.size(), 1u);  // the closing brace is not part of the answer
  EXPECT_EQ(induced.token_cost, 2u);
  EXPECT_NEAR(induced.confidence()->value, 0.95, 1e-9);
}

TEST(InterpretInduction, OneHotAnswerHasFullConfidence) {
  InductionResponse r;
  r.text = "42}";
  TokenObservation a{"4", {{"4", 1.0}}, 0}, b{"2", {{"2", 1.0}, {"3", 0.0}}, 1}, c{"}", {{"}", 1.0}}, 2};
  r.tokens = {a, b, c};
  const auto induced = interpret_induction(r, InductionPrompt{}, 20);
  EXPECT_EQ(*induced.canonical, "42");
  EXPECT_EQ(induced.distributions.size(), 2u);
  EXPECT_EQ(induced.confidence()->value, 1.0);
}

TEST(InterpretInduction, UnparseableReplyIsAbsent) {
  const auto reply = te_test::scripted_reply(std::nullopt, 0.9);
  InductionPrompt p;
  p.template_text = "{reasoning} Answer:";
  const auto induced = interpret_induction(reply, p, 20);
  EXPECT_FALSE(induced.canonical);
  EXPECT_FALSE(induced.confidence());
  EXPECT_EQ(induced.token_cost, 3u);
  const auto e = evidence_from(4, induced);
  EXPECT_EQ(e.step_index, 4u);
  EXPECT_FALSE(e.answer);
}

TEST(InterpretInduction, PlainTemplateUsesTextFallback) {
  InductionResponse r;
  r.text = " The answer is 7.";
  r.tokens = {te_test::tok(" The"), te_test::tok(" answer"), te_test::tok(" is"), te_test::tok(" 7", 0.6),
              te_test::tok(".")};
  InductionPrompt p;
  p.template_text = "{reasoning}\nAnswer:";
  const auto induced = interpret_induction(r, p, 20);
  EXPECT_EQ(*induced.canonical, "7");
  ASSERT_EQ(induced.distributions.size(), 1u);
  EXPECT_NEAR(induced.confidence()->value, 1.0 - te_test::brute_force_entropy({0.6, 0.4}), 1e-12);
}

TEST(InterpretInduction, AnswerTokenWithoutCandidatesIsRejected) {
  InductionResponse r;
  r.text = "5}";
  r.tokens = {TokenObservation{"5", {}, 0}, te_test::tok("}")};
  EXPECT_THROW(interpret_induction(r, InductionPrompt{}, 20), ValidationError);
}

class CapturingDriver final : public ModelDriver {
 public:
  void start(const std::string&) override {}
  std::optional<TokenObservation> next_token() override { return std::nullopt; }
  void cancel() override {}
  InductionResponse induce(const InductionRequest& request) override {
    last = request;
    if (fail) throw DriverError("endpoint unavailable", true);
    return te_test::scripted_reply(std::string("9"), 0.8);
  }
  std::string name() const override { return "capture"; }

  InductionRequest last;
  bool fail = false;
};

TEST(Induce, BuildsRequestFromTemplate) {
  CapturingDriver d;
  const auto induced = induce(d, 3, "Q?", "reasoning so far", InductionPrompt{}, 20);
  EXPECT_EQ(d.last.step_index, 3u);
  EXPECT_EQ(d.last.question, "Q?");
  EXPECT_EQ(d.last.reasoning, "reasoning so far");
  EXPECT_EQ(d.last.prompt_text, InductionPrompt{}.render("reasoning so far"));
  EXPECT_EQ(d.last.max_answer_tokens, 32u);
  EXPECT_EQ(*induced.canonical, "9");
  const auto e = evidence_from(3, induced);
  EXPECT_EQ(*e.answer, "9");
  EXPECT_NEAR(e.confidence->value, 0.8, 1e-9);
}

TEST(Induce, DriverErrorCarriesStep) {
  CapturingDriver d;
  d.fail = true;
  try {
    induce(d, 6, "Q", "R", InductionPrompt{}, 20);
    FAIL() << "expected DriverError";
  } catch (const DriverError& e) {
    EXPECT_EQ(e.step(), 6);
    EXPECT_TRUE(e.retryable());
    EXPECT_NE(std::string(e.what()).find("step 6"), std::string::npos);
  }
  EXPECT_THROW(induce(d, 1, "Q", "", InductionPrompt{}, 20), ValidationError);
}

}  // namespace

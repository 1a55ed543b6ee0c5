// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "qcaption/error.hpp"
#include "qcaption/evaluation/judge.hpp"
#include "qcaption/evaluation/report.hpp"

using namespace qcaption;
using namespace qcaption::eval;
using nlohmann::json;

namespace {

std::shared_ptr<models::ModelBackend> judge_mock(json script) {
  models::BackendConfig c;
  c.backend_id = "judge";
  c.kind = models::BackendKind::Judge;
  c.type = "mock";
  c.script = std::move(script);
  return models::make_backend(c);
}

JudgeVerdict verdict(bool matched, int score) {
  JudgeVerdict v;
  v.matched = matched;
  v.score = score;
  return v;
}

}  // namespace

TEST_CASE("judge parses a clean JSON reply") {
  auto j = judge_mock(json::array({{{"response", R"({"pred": "yes", "score": 5})"}}}));
  const auto v = judge_qa("what is he doing?", "cooking", "he is cooking", *j);
  CHECK(v.matched);
  CHECK(v.score == 5);
  CHECK(v.attempts == 1);
  const auto calls = dynamic_cast<models::MockBackend&>(*j).calls();
  REQUIRE(calls.size() == 1);
  CHECK(calls[0].prompt.find("Question: what is he doing?") != std::string::npos);
  CHECK(calls[0].prompt.find("Correct Answer: cooking") != std::string::npos);
  CHECK(calls[0].prompt.find("Predicted Answer: he is cooking") != std::string::npos);
}

TEST_CASE("judge extracts the first JSON object from prose") {
  auto j = judge_mock(json::array({{{"response", R"(Sure! Here is my verdict: {"pred":"no","score":2} Hope it helps {"pred":"yes","score":5})"}}}));
  const auto v = judge_qa("q", "a", "p", *j);
  CHECK_FALSE(v.matched);
  CHECK(v.score == 2);
}

TEST_CASE("judge retries once with a nudge, then gives up") {
  auto j = judge_mock(json::array({{{"response", "maybe"}}}));
  try {
    judge_qa("q", "a", "p", *j, {}, "vid3");
    FAIL("expected JudgeUnparseable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::JudgeUnparseable);
    CHECK(e.video_id() == std::optional<std::string>("vid3"));
  }
  const auto calls = dynamic_cast<models::MockBackend&>(*j).calls();
  REQUIRE(calls.size() == 2);
  CHECK(calls[1].prompt.find("exact format") != std::string::npos);
  CHECK(calls[1].prompt.rfind(calls[0].prompt, 0) == 0);

  auto recovering = judge_mock(json::array({{{"match", {{"prompt_contains", "exact format"}}}, {"response", R"({"pred": "yes", "score": 3})"}},
                                            {{"response", "I think it is right"}}}));
  const auto v = judge_qa("q", "a", "p", *recovering);
  CHECK(v.matched);
  CHECK(v.score == 3);
  CHECK(v.attempts == 2);
}

TEST_CASE("verdict parser edge cases") {
  CHECK(parse_verdict(R"({"pred": "YES ", "score": "4"})")->score == 4);
  CHECK(parse_verdict(R"({"pred": true, "score": 1.0})")->matched);
  CHECK_FALSE(parse_verdict(R"({"pred": "yes", "score": 6})"));
  CHECK_FALSE(parse_verdict(R"({"pred": "yes", "score": 2.5})"));
  CHECK_FALSE(parse_verdict(R"({"pred": "perhaps", "score": 2})"));
  CHECK_FALSE(parse_verdict(R"({"score": 2})"));
  CHECK_FALSE(parse_verdict("no braces at all"));
  CHECK(parse_verdict(R"(text {broken {"pred": "no", "score": 0} tail)")->score == 0);
  CHECK(parse_verdict(R"({"note": "a } inside a string", "pred": "yes", "score": 5})")->matched);
  CHECK(first_json_object(R"(x {"a": {"b": 1}} y)")->at("a").at("b") == 1);
}

TEST_CASE("judge is deterministic with a scripted backend") {
  auto j = judge_mock(json::array({{{"match", {{"prompt_contains", "Predicted Answer: red"}}}, {"response", R"({"pred":"yes","score":4})"}},
                                   {{"response", R"({"pred":"no","score":1})"}}}));
  for (int i = 0; i < 3; ++i) {
    CHECK(judge_qa("color?", "red", "red", *j).score == 4);
    CHECK(judge_qa("color?", "red", "blue", *j).score == 1);
  }
}

TEST_CASE("aggregate_qa") {
  const std::vector<JudgeVerdict> five{verdict(true, 5), verdict(true, 4), verdict(true, 4), verdict(false, 2),
                                       verdict(false, 2)};
  const auto a = aggregate_qa(five);
  CHECK(a.accuracy == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(a.mean_score == doctest::Approx(3.4).epsilon(1e-12));
  CHECK(a.count == 5);
  CHECK(a.matched == 3);

  auto shuffled = five;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(aggregate_qa(shuffled).accuracy == a.accuracy);
  CHECK(aggregate_qa(shuffled).mean_score == a.mean_score);

  const auto perfect = aggregate_qa({verdict(true, 5), verdict(true, 5)});
  CHECK(perfect.accuracy == 100.0);
  CHECK(perfect.mean_score == 5.0);
  const auto zero = aggregate_qa({verdict(false, 0)});
  CHECK(zero.accuracy == 0.0);
  CHECK(zero.mean_score == 0.0);
  CHECK_THROWS_AS(aggregate_qa({}), Error);
}

TEST_CASE("report json and text table") {
  EvalReport rep;
  rep.rows.push_back({"Katna + LLaVA + LLM", "youcook2", "caption", {{"cider", 28.7}, {"cider_raw", 0.287}}, 3, 3, 0});
  rep.rows.push_back({"Regular Sampling + LLaVA (no LLM)", "activitynet-qa", "qa", {{"accuracy", 60.0}, {"score", 3.4}}, 6, 5, 1});
  const auto back = EvalReport::from_json(rep.to_json());
  CHECK(back.rows == rep.rows);
  const auto text = rep.to_text();
  CHECK(text.find("cider=28.7") != std::string::npos);
  CHECK(text.find("accuracy=60.0  score=3.4") != std::string::npos);
  CHECK(text.find("cider_raw") == std::string::npos);
  CHECK(text.find("5/6") != std::string::npos);
}

// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qcaption/model_backends.hpp"

namespace qcaption::eval {

inline constexpr std::string_view kDefaultJudgePrompt =
    "You are evaluating a predicted answer to a question about a video. Compare the predicted answer with the "
    "correct answer and decide whether they match in meaning. Synonyms and paraphrases count as a match; "
    "contradictions or missing key information do not.\n"
    "\n"
    "Question: {question}\n"
    "Correct Answer: {answer}\n"
    "Predicted Answer: {prediction}\n"
    "\n"
    "Reply with only a JSON object of the form {\"pred\": \"yes\" or \"no\", \"score\": <integer 0 to 5>}, "
    "where score rates how well the predicted answer matches the correct answer (5 = perfect). "
    "Example: {\"pred\": \"yes\", \"score\": 4}";

inline constexpr std::string_view kDefaultJudgeNudge =
    "\n\nYour previous reply could not be parsed. Reply in the exact format {\"pred\": \"yes\" or \"no\", "
    "\"score\": <integer 0 to 5>} and nothing else.";

struct JudgeConfig {
  std::string prompt_template = std::string(kDefaultJudgePrompt);  // {question} {answer} {prediction}
  std::string nudge = std::string(kDefaultJudgeNudge);              // appended on the retry

  static JudgeConfig from_json(const nlohmann::json& j);
};

struct JudgeVerdict {
  bool matched = false;
  int score = 0;  // 0..5
  std::string raw;
  int attempts = 1;
};

/// First balanced {...} in `text` that parses as a JSON object.
std::optional<nlohmann::json> first_json_object(std::string_view text);

/// Reads {"pred": "yes"|"no", "score": 0..5} out of free text.
std::optional<JudgeVerdict> parse_verdict(std::string_view text);

/// Asks the judge once, and once more with the nudge if the reply does not
/// parse. Throws JudgeUnparseable after the second failure.
JudgeVerdict judge_qa(const std::string& question, const std::string& ground_truth, const std::string& prediction,
                      models::ModelBackend& judge, const JudgeConfig& cfg = {},
                      const std::optional<std::string>& video_id = std::nullopt);

struct QaAggregate {
  double accuracy = 0.0;  // percent matched
  double mean_score = 0.0;
  std::size_t count = 0;
  std::size_t matched = 0;
};

QaAggregate aggregate_qa(const std::vector<JudgeVerdict>& verdicts);

}  // namespace qcaption::eval

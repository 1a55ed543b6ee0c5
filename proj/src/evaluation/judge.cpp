// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/evaluation/judge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "qcaption/error.hpp"
#include "qcaption/util/template.hpp"

namespace qcaption::eval {

using nlohmann::json;

JudgeConfig JudgeConfig::from_json(const json& j) {
  JudgeConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) fail(ErrorCode::ConfigError, "judge config must be an object");
  c.prompt_template = j.value("prompt_template", c.prompt_template);
  c.nudge = j.value("nudge", c.nudge);
  return c;
}

std::optional<json> first_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        auto parsed = json::parse(text.substr(start, i - start + 1), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
        break;
      }
    }
  }
  return std::nullopt;
}

namespace {

std::string trimmed_lower(std::string s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

std::optional<JudgeVerdict> parse_verdict(std::string_view text) {
  const auto obj = first_json_object(text);
  if (!obj || !obj->contains("pred") || !obj->contains("score")) return std::nullopt;
  JudgeVerdict v;
  const auto& pred = (*obj)["pred"];
  if (pred.is_boolean()) {
    v.matched = pred.get<bool>();
  } else if (pred.is_string()) {
    const auto p = trimmed_lower(pred.get<std::string>());
    if (p == "yes") {
      v.matched = true;
    } else if (p != "no") {
      return std::nullopt;
    }
  } else {
    return std::nullopt;
  }
  const auto& score = (*obj)["score"];
  double s = 0.0;
  if (score.is_number()) {
    s = score.get<double>();
  } else if (score.is_string()) {
    try {
      std::size_t used = 0;
      const auto str = score.get<std::string>();
      s = std::stod(str, &used);
      if (used != str.size()) return std::nullopt;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  } else {
    return std::nullopt;
  }
  if (!(s >= 0.0 && s <= 5.0) || std::floor(s) != s) return std::nullopt;
  v.score = static_cast<int>(s);
  v.raw = std::string(text);
  return v;
}

JudgeVerdict judge_qa(const std::string& question, const std::string& ground_truth, const std::string& prediction,
                      models::ModelBackend& judge, const JudgeConfig& cfg, const std::optional<std::string>& video_id) {
  const auto prompt = util::render_template(
      cfg.prompt_template, {{"question", question}, {"answer", ground_truth}, {"prediction", prediction}});
  models::RequestMetadata meta;
  meta.video_id = video_id;
  const auto first = models::complete_text(judge, prompt, meta);
  if (auto v = parse_verdict(first.text)) return *v;
  const auto second = models::complete_text(judge, prompt + cfg.nudge, meta);
  if (auto v = parse_verdict(second.text)) {
    v->attempts = 2;
    return *v;
  }
  auto excerpt = second.text.substr(0, 200);
  throw Error(ErrorCode::JudgeUnparseable, "judge reply not parseable after retry: " + excerpt)
      .with_origin(video_id, std::nullopt);
}

QaAggregate aggregate_qa(const std::vector<JudgeVerdict>& verdicts) {
  if (verdicts.empty()) fail(ErrorCode::InvalidArgument, "aggregate_qa needs at least one verdict");
  QaAggregate a;
  a.count = verdicts.size();
  long score_sum = 0;
  for (const auto& v : verdicts) {
    if (v.matched) ++a.matched;
    score_sum += v.score;
  }
  a.accuracy = 100.0 * static_cast<double>(a.matched) / static_cast<double>(a.count);
  a.mean_score = static_cast<double>(score_sum) / static_cast<double>(a.count);
  return a;
}

}  // namespace qcaption::eval

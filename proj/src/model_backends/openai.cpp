// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <regex>

#include "qcaption/error.hpp"
#include "qcaption/model_backends.hpp"
#include "qcaption/util/codec.hpp"

namespace qcaption::models {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string excerpt(const std::string& body) { return body.size() <= 400 ? body : body.substr(0, 400) + "..."; }

bool mentions_context_limit(const std::string& body) {
  const auto b = lower(body);
  return b.find("context_length_exceeded") != std::string::npos ||
         (b.find("context") != std::string::npos &&
          (b.find("too long") != std::string::npos || b.find("maximum") != std::string::npos ||
           b.find("length") != std::string::npos));
}

[[noreturn]] void raise_for_status(int status, const std::string& body, bool has_video) {
  const auto msg = "HTTP " + std::to_string(status) + ": " + excerpt(body);
  if (status == 429) throw Error(ErrorCode::RateLimited, msg).with_http_status(status);
  if (status == 413 || (status == 400 && mentions_context_limit(body))) {
    throw Error(ErrorCode::ContextTooLong, msg).with_http_status(status);
  }
  if (status == 415 || status == 501 || (has_video && status == 400 && lower(body).find("video") != std::string::npos)) {
    throw Error(ErrorCode::UnsupportedByServer, msg).with_http_status(status);
  }
  throw Error(ErrorCode::HttpError, msg).with_http_status(status);
}

std::string extract_content(const json& message) {
  const auto it = message.find("content");
  if (it == message.end()) return {};
  if (it->is_string()) return it->get<std::string>();
  if (!it->is_array()) return {};
  std::string out;
  for (const auto& part : *it) {
    if (part.is_object() && part.value("type", "") == "text" && part.contains("text") && part["text"].is_string()) {
      out += part["text"].get<std::string>();
    }
  }
  return out;
}

}  // namespace

OpenAIBackend::OpenAIBackend(BackendConfig cfg) : ModelBackend(std::move(cfg)) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  const auto& url = config().endpoint_url;
  if (!std::regex_match(url, m, url_re)) fail(ErrorCode::ConfigError, "bad endpoint_url '" + url + "'");
  scheme_host_port_ = m[1].str();
  base_path_ = m[2].matched ? m[2].str() : "/v1";
  while (base_path_.size() > 1 && base_path_.back() == '/') base_path_.pop_back();
  const std::string suffix = "/chat/completions";
  if (base_path_.size() >= suffix.size() && base_path_.compare(base_path_.size() - suffix.size(), suffix.size(), suffix) == 0) {
    base_path_.resize(base_path_.size() - suffix.size());
  }
}

json OpenAIBackend::request_body(const ModelRequest& request) const {
  const auto& cfg = config();
  json content;
  if (request.attachments.empty()) {
    content = request.prompt;
  } else {
    content = json::array({{{"type", "text"}, {"text", request.prompt}}});
    for (const auto& a : request.attachments) {
      if (a.kind == Attachment::Kind::Image) {
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:" + a.media_type + ";base64," + util::base64_encode(a.bytes)}}}});
      } else if (cfg.video_transport == VideoTransport::FilePath) {
        content.push_back({{"type", "video_url"}, {"video_url", {{"url", "file://" + a.clip_path.string()}}}});
      } else {
        content.push_back({{"type", "video_url"}, {"video_url", {{"url", "attachment://file"}}}});
      }
    }
  }
  json body{{"model", cfg.model_name},
            {"messages", json::array({{{"role", "user"}, {"content", content}}})},
            {"temperature", cfg.temperature},
            {"stream", false}};
  if (cfg.max_tokens) body["max_tokens"] = *cfg.max_tokens;
  return body;
}

ModelResponse OpenAIBackend::do_complete(const ModelRequest& request) {
  const auto& cfg = config();
  httplib::Client cli(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(cfg.timeout_s));
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  httplib::Headers headers;
  if (!cfg.api_key_env.empty()) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      fail(ErrorCode::ConfigError, "environment variable " + cfg.api_key_env + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const auto path = base_path_ + "/chat/completions";
  const auto body = request_body(request);
  const bool has_video = std::any_of(request.attachments.begin(), request.attachments.end(),
                                     [](const Attachment& a) { return a.kind == Attachment::Kind::Clip; });

  httplib::Result res;
  if (has_video && cfg.video_transport == VideoTransport::Multipart) {
    const auto& clip = request.attachments.front();
    httplib::MultipartFormDataItems items{
        {"payload", body.dump(), "", "application/json"},
        {"file", std::string(clip.bytes.begin(), clip.bytes.end()), clip.clip_path.filename().string(), clip.media_type}};
    res = cli.Post(path, headers, items);
  } else {
    res = cli.Post(path, headers, body.dump(), "application/json");
  }

  if (!res) {
    const auto err = res.error();
    const auto what = httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read || err == httplib::Error::Write) {
      fail(ErrorCode::Timeout, "request to " + scheme_host_port_ + path + " failed: " + what);
    }
    throw Error(ErrorCode::HttpError, "request to " + scheme_host_port_ + path + " failed: " + what);
  }
  if (res->status < 200 || res->status >= 300) raise_for_status(res->status, res->body, has_video);

  json j;
  try {
    j = json::parse(res->body);
  } catch (const json::exception&) {
    fail(ErrorCode::MalformedResponse, "response is not JSON: " + excerpt(res->body));
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    fail(ErrorCode::MalformedResponse, "response has no choices: " + excerpt(res->body));
  }
  const auto& choice = j["choices"][0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
    fail(ErrorCode::MalformedResponse, "first choice has no message");
  }
  ModelResponse out;
  out.text = extract_content(choice["message"]);
  if (out.text.empty()) fail(ErrorCode::MalformedResponse, "assistant message has no text content");
  if (j.contains("usage") && j["usage"].is_object()) {
    const auto& u = j["usage"];
    out.token_usage = TokenUsage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0)};
  }
  return out;
}

bool OpenAIBackend::ping() {
  httplib::Client cli(scheme_host_port_);
  cli.set_connection_timeout(std::chrono::seconds(2));
  cli.set_read_timeout(std::chrono::seconds(5));
  auto res = cli.Get(base_path_ + "/models");
  return res && res->status < 500;
}

}  // namespace qcaption::models

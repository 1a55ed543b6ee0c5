// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <thread>

#include "qcaption/error.hpp"
#include "qcaption/model_backends.hpp"
#include "qcaption/util/codec.hpp"
#include "support/fake_chat_server.hpp"
#include "support/test_support.hpp"

using namespace qcaption;
using namespace qcaption::models;
using nlohmann::json;
using qcaption::testing::CannedReply;
using qcaption::testing::FakeChatServer;

namespace {

media::FrameImage tiny_frame(std::int64_t index) {
  media::FrameImage f;
  f.frame_index = index;
  f.width = 8;
  f.height = 8;
  f.pixels.assign(8 * 8 * 3, static_cast<std::uint8_t>(index * 10));
  return f;
}

BackendConfig mock_cfg(BackendKind kind, json script, bool strict = true) {
  BackendConfig c;
  c.backend_id = "mock-" + to_string(kind);
  c.kind = kind;
  c.type = "mock";
  c.script = std::move(script);
  c.strict = strict;
  c.backoff_base_s = 0.001;
  return c;
}

BackendConfig http_cfg(const FakeChatServer& srv, BackendKind kind) {
  BackendConfig c;
  c.backend_id = "http-" + to_string(kind);
  c.kind = kind;
  c.type = "openai";
  c.endpoint_url = srv.url();
  c.model_name = "test-model";
  c.backoff_base_s = 0.01;
  c.timeout_s = 5;
  return c;
}

Error catch_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected qcaption::Error");
  return Error(ErrorCode::ConfigError, "unreachable");
}

std::filesystem::path fake_clip() {
  const auto p = qcaption::testing::fresh_dir("clips_mb") / "clip.mp4";
  util::write_file_text(p, std::string(1000, 'v'));
  return p;
}

}  // namespace

TEST_CASE("scripted mock captions frames by index") {
  auto be = make_backend(mock_cfg(BackendKind::ImageLmm, json::array({{{"response", "caption-{frame_index}"}}})));
  const auto r = caption_image(*be, tiny_frame(3), "Describe.", "vid");
  CHECK(r.text == "caption-3");
  CHECK(r.backend_id == "mock-image_lmm");
  CHECK(r.retries == 0);
}

TEST_CASE("mock keyed matching, echo and prompt hashes") {
  const std::string prompt = "Summarize these captions";
  auto be = make_backend(mock_cfg(
      BackendKind::TextLlm,
      json::array({{{"match", {{"prompt_sha256", util::sha256_hex(prompt)}}}, {"response", "hashed answer"}},
                   {{"match", {{"prompt_contains", "echo me"}}}, {"echo", true}},
                   {{"match", {{"kind", "judge"}}}, {"response", "never"}}})));
  CHECK(complete_text(*be, prompt).text == "hashed answer");
  CHECK(complete_text(*be, "please echo me back").text == "please echo me back");
  const auto e = catch_error([&] { complete_text(*be, "something else", {"v9", std::nullopt}); });
  CHECK(e.code() == ErrorCode::ScriptExhausted);
  CHECK(e.video_id() == std::optional<std::string>("v9"));

  auto lenient = make_backend(mock_cfg(BackendKind::TextLlm, json::array(), false));
  CHECK(complete_text(*lenient, "verbatim prompt").text == "verbatim prompt");

  BackendConfig echo;
  echo.backend_id = "echo";
  echo.type = "echo";
  CHECK(complete_text(*make_backend(echo), "abc").text == "abc");
}

TEST_CASE("mock ordered mode and use budgets") {
  auto cfg = mock_cfg(BackendKind::TextLlm,
                      json::array({{{"response", "first"}}, {{"response", "second"}, {"times", 2}}, {{"response", "third"}}}));
  cfg.ordered = true;
  auto be = make_backend(cfg);
  CHECK(complete_text(*be, "x").text == "first");
  CHECK(complete_text(*be, "x").text == "second");
  CHECK(complete_text(*be, "x").text == "second");
  CHECK(complete_text(*be, "x").text == "third");
  CHECK(catch_error([&] { complete_text(*be, "x"); }).code() == ErrorCode::ScriptExhausted);

  auto keyed = make_backend(mock_cfg(BackendKind::TextLlm,
                                     json::array({{{"response", "limited"}, {"times", 1}}, {{"response", "fallback"}}})));
  CHECK(complete_text(*keyed, "x").text == "limited");
  CHECK(complete_text(*keyed, "x").text == "fallback");
}

TEST_CASE("mock script file format") {
  const auto dir = qcaption::testing::fresh_dir("mock_script");
  util::write_file_text(dir / "s.jsonl",
                        "{\"match\": {\"kind\": \"image_lmm\", \"frame_index\": 2}, \"response\": \"two\"}\n"
                        "\n"
                        "{\"match\": {\"kind\": \"image_lmm\"}, \"response\": \"other {video_id}\"}\n");
  auto cfg = mock_cfg(BackendKind::ImageLmm, nullptr);
  cfg.script_path = dir / "s.jsonl";
  auto be = make_backend(cfg);
  CHECK(caption_image(*be, tiny_frame(2), "p").text == "two");
  CHECK(caption_image(*be, tiny_frame(5), "p", "abc").text == "other abc");

  util::write_file_text(dir / "bad.jsonl", "{not json\n");
  cfg.script_path = dir / "bad.jsonl";
  CHECK(catch_error([&] { make_backend(cfg); }).code() == ErrorCode::ConfigError);
}

TEST_CASE("scripted errors are retried or surfaced with their origin") {
  auto be = make_backend(mock_cfg(
      BackendKind::ImageLmm,
      json::array({{{"match", {{"frame_index", 1}}}, {"error", {{"code", "HttpError"}, {"status", 503}}}, {"times", 2}},
                   {{"match", {{"frame_index", 4}}}, {"error", "MalformedResponse"}},
                   {{"response", "ok {frame_index}"}}})));
  const auto r = caption_image(*be, tiny_frame(1), "p", "vidA");
  CHECK(r.text == "ok 1");
  CHECK(r.retries == 2);

  const auto e = catch_error([&] { caption_image(*be, tiny_frame(4), "p", "vidA"); });
  CHECK(e.code() == ErrorCode::MalformedResponse);
  CHECK(e.video_id() == std::optional<std::string>("vidA"));
  CHECK(e.frame_index() == std::optional<std::int64_t>(4));
  auto* mock = dynamic_cast<MockBackend*>(be.get());
  REQUIRE(mock);
  CHECK(mock->call_count() == 4);  // 3 for frame 1, 1 for frame 4 (not retryable)
}

TEST_CASE("request shape and backend kind are enforced") {
  auto text = make_backend(mock_cfg(BackendKind::TextLlm, json::array({{{"response", "x"}}})));
  CHECK(catch_error([&] { caption_image(*text, tiny_frame(0), "p"); }).code() == ErrorCode::ConfigError);
  ModelRequest bad;
  bad.prompt = "p";
  bad.attachments.push_back({Attachment::Kind::Image, "image/png", {1, 2, 3}, {}});
  CHECK(catch_error([&] { text->complete(bad); }).code() == ErrorCode::InvalidArgument);

  auto video = make_backend(mock_cfg(BackendKind::VideoLmm, json::array({{{"response", "clip caption"}}})));
  CHECK(caption_clip(*video, fake_clip(), "Describe the clip.", "v", 0).text == "clip caption");
  CHECK(catch_error([&] { caption_clip(*video, "/nonexistent/clip.mp4", "p"); }).code() == ErrorCode::FileNotFound);
  CHECK(catch_error([&] { complete_text(*video, "p"); }).code() == ErrorCode::ConfigError);
}

TEST_CASE("config validation") {
  CHECK(catch_error([] { BackendConfig::from_json({{"backend_id", "x"}, {"kind", "nope"}}); }).code() ==
        ErrorCode::ConfigError);
  CHECK(catch_error([] { BackendConfig::from_json({{"backend_id", "x"}, {"type", "openai"}}); }).code() ==
        ErrorCode::ConfigError);
  CHECK(catch_error([] { BackendConfig::from_json({{"backend_id", "x"}, {"type", "mock"}, {"timeout_s", 0}}); })
            .code() == ErrorCode::ConfigError);
  CHECK(catch_error([] { BackendConfig::from_json({{"backend_id", "x"}, {"type", "mock"}, {"max_retries", -1}}); })
            .code() == ErrorCode::ConfigError);
  const auto c = BackendConfig::from_json({{"backend_id", "llava"},
                                           {"kind", "image_lmm"},
                                           {"endpoint_url", "http://localhost:8000/v1"},
                                           {"model_name", "llava-v1.5-7b"}});
  CHECK(c.timeout_s == 120.0);
  CHECK(c.max_retries == 2);
  CHECK(c.max_in_flight == 4);
  CHECK(c.temperature == 0.0);
  CHECK(BackendConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("in-flight requests never exceed the bound") {
  auto cfg = mock_cfg(BackendKind::ImageLmm, json::array({{{"response", "c{frame_index}"}, {"delay_ms", 15}}}));
  cfg.max_in_flight = 3;
  auto be = make_backend(cfg);
  std::vector<std::thread> threads;
  for (int t = 0; t < 12; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 4; ++i) caption_image(*be, tiny_frame(t * 4 + i), "p");
    });
  }
  for (auto& th : threads) th.join();
  auto* mock = dynamic_cast<MockBackend*>(be.get());
  CHECK(mock->call_count() == 48);
  CHECK(mock->max_overlap() <= 3);
  CHECK(mock->max_overlap() >= 2);
  CHECK(be->peak_in_flight() <= 3);
}

TEST_CASE("content-addressed cache short-circuits repeat calls") {
  auto cfg = mock_cfg(BackendKind::ImageLmm, json::array({{{"response", "c{frame_index}"}}}));
  cfg.cache_dir = qcaption::testing::fresh_dir("mb_cache");
  auto be = make_backend(cfg);
  const auto a = caption_image(*be, tiny_frame(2), "p");
  const auto b = caption_image(*be, tiny_frame(2), "p");
  const auto c = caption_image(*be, tiny_frame(2), "other prompt");
  CHECK(a.text == b.text);
  CHECK(!a.cached);
  CHECK(b.cached);
  CHECK(!c.cached);
  CHECK(dynamic_cast<MockBackend*>(be.get())->call_count() == 2);

  // a fresh backend instance over the same directory also hits
  auto again = make_backend(cfg);
  CHECK(caption_image(*again, tiny_frame(2), "p").cached);
  CHECK(dynamic_cast<MockBackend*>(again.get())->call_count() == 0);
}

TEST_CASE("http: 500 twice then 200 succeeds with two retries") {
  FakeChatServer srv;
  srv.queue({{500, "boom", 0}, {500, "boom", 0}, CannedReply::text("a red square")});
  auto be = make_backend(http_cfg(srv, BackendKind::ImageLmm));
  const auto r = caption_image(*be, tiny_frame(3), "Describe.");
  CHECK(r.text == "a red square");
  CHECK(r.retries == 2);
  REQUIRE(r.token_usage);
  CHECK(r.token_usage->prompt_tokens == 11);

  const auto seen = srv.seen();
  REQUIRE(seen.size() == 3);
  CHECK(seen[0].path == "/v1/chat/completions");
  const auto body = json::parse(seen[0].body);
  CHECK(body["model"] == "test-model");
  CHECK(body["temperature"] == 0.0);
  const auto& content = body["messages"][0]["content"];
  CHECK(content[0]["type"] == "text");
  CHECK(content[0]["text"] == "Describe.");
  CHECK(content[1]["type"] == "image_url");
  CHECK(content[1]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,iVBOR", 0) == 0);
}

TEST_CASE("http: retries are bounded") {
  FakeChatServer srv;
  srv.queue({{503, "unavailable", 0}});
  auto cfg = http_cfg(srv, BackendKind::TextLlm);
  cfg.max_retries = 1;
  auto be = make_backend(cfg);
  const auto e = catch_error([&] { complete_text(*be, "hi", {"v1", std::nullopt}); });
  CHECK(e.code() == ErrorCode::HttpError);
  CHECK(e.http_status() == 503);
  CHECK(e.video_id() == std::optional<std::string>("v1"));
  CHECK(srv.seen().size() == 2);
}

TEST_CASE("http: error mapping") {
  FakeChatServer srv;
  auto be = make_backend(http_cfg(srv, BackendKind::TextLlm));

  srv.queue({{200, R"({"choices": []})", 0}});
  CHECK(catch_error([&] { complete_text(*be, "x"); }).code() == ErrorCode::MalformedResponse);
  CHECK(srv.seen().size() == 1);

  srv.queue({{200, R"({"choices": [{"message": {"role": "assistant"}}]})", 0}});
  CHECK(catch_error([&] { complete_text(*be, "x"); }).code() == ErrorCode::MalformedResponse);

  srv.queue({{200, "<html>", 0}});
  CHECK(catch_error([&] { complete_text(*be, "x"); }).code() == ErrorCode::MalformedResponse);

  srv.queue({{429, R"({"error": "slow down"})", 0}});
  CHECK(catch_error([&] { complete_text(*be, "x"); }).code() == ErrorCode::RateLimited);
  CHECK(srv.seen().size() == 3);

  srv.queue({{400, R"({"error": {"message": "This model's maximum context length is 4096 tokens"}})", 0}});
  CHECK(catch_error([&] { complete_text(*be, std::string(10000, 'x')); }).code() == ErrorCode::ContextTooLong);
  CHECK(srv.seen().size() == 1);

  srv.queue({{404, "not found", 0}});
  const auto e = catch_error([&] { complete_text(*be, "x"); });
  CHECK(e.code() == ErrorCode::HttpError);
  CHECK(e.http_status() == 404);
  CHECK(std::string(e.what()).find("not found") != std::string::npos);

  srv.queue({{200, R"({"choices": [{"message": {"content": [{"type": "text", "text": "part"}, {"type": "text", "text": "s"}]}}]})", 0}});
  CHECK(complete_text(*be, "x").text == "parts");
}

TEST_CASE("http: timeouts surface as Timeout") {
  FakeChatServer srv;
  srv.queue({{200, CannedReply::text("late").body, 1500}});
  auto cfg = http_cfg(srv, BackendKind::TextLlm);
  cfg.timeout_s = 0.3;
  cfg.max_retries = 0;
  auto be = make_backend(cfg);
  CHECK(catch_error([&] { complete_text(*be, "x"); }).code() == ErrorCode::Timeout);
}

TEST_CASE("http: unreachable endpoint") {
  BackendConfig cfg;
  cfg.backend_id = "down";
  cfg.kind = BackendKind::TextLlm;
  cfg.endpoint_url = "http://127.0.0.1:1/v1";
  cfg.max_retries = 0;
  auto be = make_backend(cfg);
  CHECK(catch_error([&] { complete_text(*be, "x"); }).code() == ErrorCode::HttpError);
  CHECK_FALSE(be->ping());
}

TEST_CASE("http: api key from the environment") {
  FakeChatServer srv;
  srv.queue({CannedReply::text("ok")});
  auto cfg = http_cfg(srv, BackendKind::Judge);
  cfg.api_key_env = "QCAPTION_TEST_KEY_UNSET";
  ::unsetenv("QCAPTION_TEST_KEY_UNSET");
  CHECK(catch_error([&] { complete_text(*make_backend(cfg), "x"); }).code() == ErrorCode::ConfigError);
  ::setenv("QCAPTION_TEST_KEY", "sekrit", 1);
  cfg.api_key_env = "QCAPTION_TEST_KEY";
  auto be = make_backend(cfg);
  CHECK(complete_text(*be, "x").text == "ok");
  CHECK(srv.seen().back().authorization == "Bearer sekrit");
  CHECK(json::parse(srv.seen().back().body)["messages"][0]["content"] == "x");
  CHECK(be->ping());
}

TEST_CASE("http: clips by path, multipart, and rejection") {
  FakeChatServer srv;
  const auto clip = fake_clip();
  auto cfg = http_cfg(srv, BackendKind::VideoLmm);

  srv.queue({CannedReply::text("someone chops onions")});
  CHECK(caption_clip(*make_backend(cfg), clip, "Describe.").text == "someone chops onions");
  {
    const auto body = json::parse(srv.seen().at(0).body);
    const auto& part = body["messages"][0]["content"][1];
    CHECK(part["type"] == "video_url");
    CHECK(part["video_url"]["url"] == "file://" + std::filesystem::absolute(clip).string());
  }

  cfg.video_transport = VideoTransport::Multipart;
  srv.queue({CannedReply::text("multipart ok")});
  CHECK(caption_clip(*make_backend(cfg), clip, "Describe.").text == "multipart ok");
  {
    const auto seen = srv.seen().at(0);
    CHECK(seen.content_type.rfind("multipart/form-data", 0) == 0);
    CHECK(seen.multipart_file_size == 1000);
    CHECK(json::parse(seen.multipart_payload)["model"] == "test-model");
  }

  srv.queue({{415, "video payloads not supported", 0}});
  CHECK(catch_error([&] { caption_clip(*make_backend(cfg), clip, "p"); }).code() == ErrorCode::UnsupportedByServer);
  srv.queue({{400, "this server does not accept video input", 0}});
  CHECK(catch_error([&] { caption_clip(*make_backend(cfg), clip, "p"); }).code() == ErrorCode::UnsupportedByServer);

  srv.queue({{500, "x", 0}, {500, "x", 0}, CannedReply::text("third time")});
  const auto r = caption_clip(*make_backend(cfg), clip, "p");
  CHECK(r.text == "third time");
  CHECK(r.retries == 2);

  srv.queue({{200, R"({"choices": []})", 0}});
  CHECK(catch_error([&] { caption_clip(*make_backend(cfg), clip, "p"); }).code() == ErrorCode::MalformedResponse);
}

TEST_CASE("endpoint urls") {
  FakeChatServer srv;
  srv.queue({CannedReply::text("ok")});
  auto cfg = http_cfg(srv, BackendKind::TextLlm);
  cfg.endpoint_url = srv.url() + "/chat/completions";
  complete_text(*make_backend(cfg), "x");
  CHECK(srv.seen().back().path == "/v1/chat/completions");
  cfg.endpoint_url = "ftp://nope";
  CHECK(catch_error([&] { make_backend(cfg); }).code() == ErrorCode::ConfigError);
}

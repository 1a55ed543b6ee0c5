// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "qcaption/error.hpp"
#include "qcaption/eval_harness.hpp"
#include "support/harness_fixture.hpp"

using namespace qcaption;
using namespace qcaption::harness;
using namespace qcaption::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

models::MockBackend& mock(const std::shared_ptr<models::ModelBackend>& b) {
  return dynamic_cast<models::MockBackend&>(*b);
}

eval::EvalReport report_with(const std::string& label, const std::string& dataset, std::map<std::string, double> m) {
  eval::EvalReport r;
  r.rows.push_back({label, dataset, "caption", std::move(m), 1, 1, 0});
  return r;
}

}  // namespace

TEST_CASE("caption run: corpus CIDEr matches the brute-force oracle") {
  const auto f = caption_fixture("h_caption");
  const auto backends = f.make_backends();
  RunStats stats;
  const auto rep = run_eval(f.spec("Regular + mock", "out"), backends, decoder(), &stats);
  REQUIRE(rep.rows.size() == 1);
  const auto& row = rep.rows[0];
  CHECK(row.tasks_total == 3);
  CHECK(row.tasks_scored == 3);
  CHECK(row.tasks_failed == 0);
  const double expected = caption_fixture_oracle();
  CHECK(expected > 0.0);
  CHECK(std::abs(row.metrics.at("cider_raw") - expected) <= 1e-9);
  CHECK(std::abs(row.metrics.at("cider") - 100.0 * expected) <= 1e-7);
  CHECK(stats.executed == 3);
  CHECK(fs::exists(f.dir / "out" / kReportJsonFile));
  CHECK(slurp(f.dir / "out" / kReportTextFile).find("Regular + mock") != std::string::npos);
  CHECK(mock(backends.pipeline.image_lmm).call_count() == 12);

  const auto again = reaggregate(f.spec("Regular + mock", "out"));
  CHECK(again.rows == rep.rows);
}

TEST_CASE("interrupted run resumes only unfinished tasks") {
  const auto f = caption_fixture("h_resume");
  const auto spec = f.spec("resume", "out");
  {
    auto partial = spec;
    partial.max_tasks = 2;
    RunStats stats;
    const auto backends = f.make_backends();
    const auto rep = run_eval(partial, backends, decoder(), &stats);
    CHECK(stats.executed == 2);
    CHECK(stats.pending == 1);
    CHECK(rep.rows[0].tasks_scored == 2);
    CHECK(rep.run["tasks_pending"] == 1);
  }
  // A torn line from a crash mid-write must not break the resume.
  std::ofstream(f.dir / "out" / kJournalFile, std::ios::app) << R"({"type": "task", "key": "v3", "vid)";

  auto resumed = spec;
  resumed.resume = true;
  const auto backends = f.make_backends();
  RunStats stats;
  const auto rep = run_eval(resumed, backends, decoder(), &stats);
  CHECK(stats.executed == 1);
  CHECK(stats.skipped == 2);
  std::set<std::string> videos;
  for (const auto& c : mock(backends.pipeline.image_lmm).calls()) videos.insert(c.video_id.value_or(""));
  for (const auto& c : mock(backends.pipeline.text_llm).calls()) videos.insert(c.video_id.value_or(""));
  CHECK(videos == std::set<std::string>{"v3"});
  CHECK(rep.rows[0].tasks_scored == 3);
  CHECK(std::abs(rep.rows[0].metrics.at("cider_raw") - caption_fixture_oracle()) <= 1e-9);

  const auto journal = read_journal(f.dir / "out" / kJournalFile);
  CHECK(journal.results.size() == 3);
  CHECK(journal.identity == spec.identity());

  // Resuming a different configuration into the same directory is refused.
  auto other = resumed;
  other.pipeline.n_frames = 5;
  try {
    run_eval(other, f.make_backends(), decoder());
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
  }
}

TEST_CASE("reports are byte-identical across reruns and worker counts") {
  const auto f = caption_fixture("h_determinism");
  auto a = f.spec("det", "a");
  auto b = f.spec("det", "b");
  b.workers = 3;
  b.pipeline.workers = 2;
  a.pipeline.strategy = b.pipeline.strategy = frames::Strategy::Random;
  run_eval(a, f.make_backends(), decoder());
  run_eval(b, f.make_backends(), decoder());
  auto report_a = json::parse(slurp(f.dir / "a" / kReportJsonFile));
  auto report_b = json::parse(slurp(f.dir / "b" / kReportJsonFile));
  // The spec differs only in output location and worker widths, which are
  // not part of the report.
  CHECK(report_a == report_b);
  CHECK(slurp(f.dir / "a" / kReportJsonFile) == slurp(f.dir / "b" / kReportJsonFile));
  CHECK(slurp(f.dir / "a" / kReportTextFile) == slurp(f.dir / "b" / kReportTextFile));
  auto a2 = a;
  a2.out_dir = f.dir / "a2";
  run_eval(a2, f.make_backends(), decoder());
  CHECK(slurp(f.dir / "a" / kReportJsonFile) == slurp(f.dir / "a2" / kReportJsonFile));
}

TEST_CASE("qa run: 3/5 matched with scores 5,4,4,2,2") {
  const auto f = qa_fixture("h_qa");
  auto spec = f.spec("Regular + LLM", "out");
  spec.pipeline.task_kind = fusion::TaskKind::Qa;
  const auto backends = f.make_backends();
  const auto rep = run_eval(spec, backends, decoder());
  const auto& row = rep.rows.at(0);
  CHECK(row.task == "qa");
  CHECK(row.tasks_scored == 5);
  CHECK(row.metrics.at("accuracy") == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(row.metrics.at("score") == doctest::Approx(3.4).epsilon(1e-12));
  CHECK(mock(backends.judge).call_count() == 5);
  // Paper-faithful qa: the question is part of every frame prompt.
  for (const auto& c : mock(backends.pipeline.image_lmm).calls()) {
    CHECK(c.prompt.find("Look at this image and answer: ") == 0);
  }
  CHECK(reaggregate(spec).rows == rep.rows);
}

TEST_CASE("failed tasks are journaled and excluded from denominators") {
  const auto f = qa_fixture("h_failures");
  // A sixth task whose video does not exist.
  std::ofstream(f.manifest, std::ios::app)
      << R"({"video_id": "ghost", "video_path": "ghost.mp4", "question": "anything", "answer": "no"})" << '\n';
  auto spec = f.spec("with failure", "out");
  spec.pipeline.task_kind = fusion::TaskKind::Qa;
  CHECK_THROWS_AS(run_eval(spec, f.make_backends(), decoder()), Error);  // strict manifest
  spec.strict_manifest = false;
  const auto rep = run_eval(spec, f.make_backends(), decoder());
  const auto& row = rep.rows.at(0);
  CHECK(row.tasks_total == 6);
  CHECK(row.tasks_scored == 5);
  CHECK(row.tasks_failed == 1);
  CHECK(row.metrics.at("accuracy") == doctest::Approx(60.0));
  REQUIRE(rep.failures.size() == 1);
  CHECK(rep.failures[0]["video_id"] == "ghost");
  CHECK(rep.failures[0]["error"].get<std::string>().rfind("FileNotFound", 0) == 0);
  CHECK(rep.to_json()["rows"][0]["failure_policy"].get<std::string>().find("excluded") != std::string::npos);
}

TEST_CASE("backend failures degrade per task") {
  auto f = caption_fixture("h_backend_down");
  f.backends["text_llm"]["script"].insert(f.backends["text_llm"]["script"].begin(),
                                          json{{"match", {{"video_id", "v2"}}}, {"error", "HttpError"}});
  f.backends["text_llm"]["max_retries"] = 0;
  const auto rep = run_eval(f.spec("flaky", "out"), f.make_backends(), decoder());
  CHECK(rep.rows[0].tasks_scored == 2);
  CHECK(rep.rows[0].tasks_failed == 1);
  CHECK(rep.failures[0]["video_id"] == "v2");
}

TEST_CASE("config problems are fatal") {
  const auto f = caption_fixture("h_config");
  auto spec = f.spec("", "out");
  CHECK_THROWS_AS(run_eval(spec, f.make_backends(), decoder()), Error);
  spec = f.spec("qa without judge", "out");
  spec.pipeline.task_kind = fusion::TaskKind::Qa;
  CHECK_THROWS_AS(run_eval(spec, f.make_backends(), decoder()), Error);
  CHECK_THROWS_AS(BackendSet::from_json(json{{"painter", json::object()}}), Error);
  CHECK_THROWS_AS(BackendSet::from_json(json{{"judge", {{"type", "mock"}, {"kind", "image_lmm"}}}}), Error);
}

TEST_CASE("compare_runs relative improvements") {
  const std::vector<eval::EvalReport> caption{report_with("Video-LLaVA", "youcook2", {{"cider", 19.9}}),
                                              report_with("Katna + LLaVA + LLM", "youcook2", {{"cider", 28.7}})};
  const auto c = compare_runs(caption, "Video-LLaVA");
  REQUIRE(c.rows.size() == 1);
  CHECK(std::abs(*c.rows[0].delta_pct - 44.2) < 0.1);
  CHECK(c.to_text().find("+44.2%") != std::string::npos);

  const std::vector<eval::EvalReport> qa{report_with("base", "anet", {{"accuracy", 42.5}, {"score", 3.0}}),
                                         report_with("ours", "anet", {{"accuracy", 63.3}, {"score", 3.0}})};
  const auto q = compare_runs(qa, "base");
  REQUIRE(q.rows.size() == 2);
  CHECK(std::abs(*q.rows[0].delta_pct - 48.9) < 0.1);
  CHECK(*q.rows[1].delta_pct == 0.0);

  CHECK(relative_improvement_pct(19.9, 19.9) == 0.0);
  try {
    compare_runs(caption, "nope");
    FAIL("expected MissingBaseline");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingBaseline);
  }
  CHECK_THROWS_AS(compare_runs({caption[0]}, "Video-LLaVA"), Error);
  CHECK_THROWS_AS(compare_runs({caption[0], caption[0]}, "Video-LLaVA"), Error);
  const auto zero = compare_runs({report_with("b", "d", {{"cider", 0.0}}), report_with("x", "d", {{"cider", 1.0}})}, "b");
  CHECK_FALSE(zero.rows[0].delta_pct.has_value());
}

// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

// qcaption: command-line front end (probe, frames, caption, eval, compare,
// convert, manifest validation, serve).

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "qcaption/datasets.hpp"
#include "qcaption/error.hpp"
#include "qcaption/eval_harness.hpp"
#include "qcaption/frame_selection.hpp"
#include "qcaption/fusion_pipeline.hpp"
#include "qcaption/media_io.hpp"
#include "qcaption/qa_service.hpp"
#include "qcaption/util/codec.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qcaption;

namespace {

/// Options shared by `caption` and `eval`.
struct PipelineArgs {
  std::string strategy = "katna";
  int n = 8;
  std::uint64_t seed = 0;
  std::string use_llm = "true";
  std::string frame_prompt;
  std::string aggregation_prompt;
  std::string qa_mode;
  int workers = 4;
  std::string config;  // JSON file with PipelineConfig fields, applied first

  void add_to(CLI::App* app) {
    app->add_option("--strategy", strategy, "katna | regular | random | first_n | single | clips")
        ->capture_default_str();
    app->add_option("--n", n, "frames to select")->capture_default_str();
    app->add_option("--seed", seed, "seed for katna/random")->capture_default_str();
    app->add_option("--use-llm", use_llm, "aggregate with the text LLM (true|false)")
        ->check(CLI::IsMember({"true", "false"}))
        ->capture_default_str();
    app->add_option("--frame-prompt", frame_prompt, "override the per-frame prompt template");
    app->add_option("--aggregation-prompt", aggregation_prompt, "override the aggregation prompt template");
    app->add_option("--qa-mode", qa_mode, "question_in_frame | describe_then_answer");
    app->add_option("--workers", workers, "concurrent frame requests")->capture_default_str();
    app->add_option("--pipeline", config, "pipeline config JSON (flags override it)");
  }

  fusion::PipelineConfig build(fusion::TaskKind kind, const std::optional<std::string>& question,
                               const CLI::App* app) const {
    json j = json::object();
    if (!config.empty()) j = json::parse(util::read_file_text(config));
    auto set = [&](const char* flag, const char* key, json value) {
      if (app->count(flag) || !j.contains(key)) j[key] = std::move(value);
    };
    set("--strategy", "strategy", strategy);
    set("--n", "n_frames", n);
    set("--seed", "seed", seed);
    set("--use-llm", "use_llm", use_llm == "true");
    if (!frame_prompt.empty()) j["frame_prompt"] = frame_prompt;
    if (!aggregation_prompt.empty()) j["aggregation_prompt"] = aggregation_prompt;
    if (!qa_mode.empty()) j["qa_mode"] = qa_mode;
    j["task_kind"] = fusion::to_string(kind);
    if (question) j["question"] = *question;
    auto cfg = fusion::PipelineConfig::from_json(j);
    cfg.workers = workers;
    return cfg;
  }
};

void write_or_print(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  } else {
    util::write_file_text(out, text.back() == '\n' ? text : text + "\n");
  }
}

service::QaService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QCaption: keyframe selection, late-fusion captioning and video QA evaluation"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace | debug | info | warn | error | off")->capture_default_str();

  // probe
  auto* probe = app.add_subcommand("probe", "print video metadata");
  std::string probe_video;
  probe->add_option("video", probe_video)->required();

  // fixture
  auto* fixture = app.add_subcommand("fixture", "write a synthetic test video");
  std::string fixture_kind = "scenes", fixture_out;
  media::fixtures::FixtureSpec fixture_spec;
  double scene_len = 1.0;
  fixture->add_option("kind", fixture_kind, "scenes | constant | checker")
      ->check(CLI::IsMember({"scenes", "constant", "checker"}))
      ->required();
  fixture->add_option("out", fixture_out)->required();
  fixture->add_option("--duration", fixture_spec.duration_s)->capture_default_str();
  fixture->add_option("--fps", fixture_spec.fps)->capture_default_str();
  fixture->add_option("--width", fixture_spec.width)->capture_default_str();
  fixture->add_option("--height", fixture_spec.height)->capture_default_str();
  fixture->add_option("--scene-len", scene_len, "seconds per scene (scenes)")->capture_default_str();

  // frames
  auto* frames_cmd = app.add_subcommand("frames", "select keyframes and print the selection report");
  std::string frames_video, frames_strategy = "katna", frames_out;
  int frames_n = 8;
  std::uint64_t frames_seed = 0;
  frames_cmd->add_option("video", frames_video)->required();
  frames_cmd->add_option("--strategy", frames_strategy)->capture_default_str();
  frames_cmd->add_option("--n", frames_n)->capture_default_str();
  frames_cmd->add_option("--seed", frames_seed)->capture_default_str();
  frames_cmd->add_option("--out", frames_out, "directory for PNGs of the selected frames");

  // caption
  auto* caption = app.add_subcommand("caption", "run the fusion pipeline on one video");
  std::string caption_video, caption_backends, caption_question, caption_out;
  bool caption_timings = false;
  PipelineArgs caption_args;
  caption->add_option("video", caption_video)->required();
  caption->add_option("--backends", caption_backends, "backends config JSON")->required();
  caption->add_option("--question", caption_question, "answer a question instead of captioning");
  caption->add_option("--out", caption_out, "write the bundle here instead of stdout");
  caption->add_flag("--timings", caption_timings, "include latencies in the bundle");
  caption_args.add_to(caption);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run a benchmark manifest and write a report");
  harness::RunSpec spec;
  std::string eval_manifest, eval_task = "caption", eval_backends, eval_out;
  std::size_t eval_max_tasks = 0;
  bool eval_lenient = false;
  PipelineArgs eval_args;
  eval_cmd->add_option("--manifest", eval_manifest)->required();
  eval_cmd->add_option("--task", eval_task)->check(CLI::IsMember({"caption", "qa"}))->capture_default_str();
  eval_cmd->add_option("--backends", eval_backends)->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--label", spec.label, "report row label (default: derived from flags)");
  eval_cmd->add_option("--dataset", spec.dataset, "report dataset name (default: manifest stem)");
  eval_cmd->add_flag("--resume", spec.resume, "skip tasks already in the journal");
  eval_cmd->add_option("--task-workers", spec.workers, "tasks in flight")->capture_default_str();
  eval_cmd->add_option("--max-tasks", eval_max_tasks, "stop after this many tasks (0 = all)");
  eval_cmd->add_flag("--lenient", eval_lenient, "tolerate manifest problems (bad lines skipped, missing videos fail)");
  eval_args.add_to(eval_cmd);

  // compare
  auto* compare = app.add_subcommand("compare", "relative improvements against a baseline row");
  std::vector<std::string> compare_reports;
  std::string compare_baseline;
  bool compare_json = false;
  compare->add_option("--reports", compare_reports)->required()->expected(1, -1);
  compare->add_option("--baseline", compare_baseline)->required();
  compare->add_flag("--json", compare_json);

  // convert
  auto* convert = app.add_subcommand("convert", "convert benchmark annotations to a manifest");
  convert->require_subcommand(1);
  data::ConvertOptions conv_opts;
  std::string conv_out, conv_videos, conv_annotations, conv_questions, conv_answers;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--videos", conv_videos, "directory with the video files")->required();
    c->add_option("--out", conv_out, "manifest to write")->required();
    auto* strict = c->add_flag("--strict", conv_opts.strict, "fail on missing videos");
    c->add_flag("--lenient", [&](std::int64_t) { conv_opts.strict = false; }, "keep and flag missing videos")
        ->excludes(strict);
  };
  auto* yc2 = convert->add_subcommand("youcook2");
  yc2->add_option("--annotations", conv_annotations)->required();
  yc2->add_option("--subset", conv_opts.subset, "e.g. validation");
  add_common(yc2);
  auto* msr = convert->add_subcommand("msrvtt");
  msr->add_option("--annotations", conv_annotations)->required();
  add_common(msr);
  auto* anet = convert->add_subcommand("activitynet-qa");
  anet->add_option("--questions", conv_questions)->required();
  anet->add_option("--answers", conv_answers)->required();
  add_common(anet);

  // manifest validate
  auto* manifest_cmd = app.add_subcommand("manifest", "manifest utilities");
  manifest_cmd->require_subcommand(1);
  auto* validate = manifest_cmd->add_subcommand("validate", "check a manifest");
  std::string validate_path, validate_kind = "caption";
  bool validate_lenient = false;
  validate->add_option("manifest", validate_path)->required();
  validate->add_option("--kind", validate_kind)->check(CLI::IsMember({"caption", "qa"}))->capture_default_str();
  validate->add_flag("--lenient", validate_lenient, "report every problem instead of stopping at the first");

  // serve
  auto* serve = app.add_subcommand("serve", "run the REST service");
  service::ServiceConfig svc_cfg;
  std::string serve_backends, serve_pipeline;
  double max_upload_mb = 512;
  serve->add_option("--backends", serve_backends)->required();
  serve->add_option("--host", svc_cfg.host)->capture_default_str();
  serve->add_option("--port", svc_cfg.port)->capture_default_str();
  serve->add_option("--static", svc_cfg.static_dir, "built UI directory served at /");
  serve->add_option("--snapshot", svc_cfg.snapshot_path, "session snapshot file");
  serve->add_option("--data-dir", svc_cfg.data_dir, "where uploads are stored");
  serve->add_option("--max-upload-mb", max_upload_mb)->capture_default_str();
  serve->add_option("--turn-limit", svc_cfg.session_turn_limit)->capture_default_str();
  serve->add_option("--async-threshold", svc_cfg.async_threshold)->capture_default_str();
  serve->add_option("--cors-origin", svc_cfg.cors_origin)->capture_default_str();
  serve->add_option("--pipeline", serve_pipeline, "pipeline defaults JSON");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*probe) {
      const media::MediaDecoder dec;
      write_or_print(media::to_json(dec.probe(probe_video)).dump(2), "");
    } else if (*fixture) {
      const auto cfg = media::DecoderConfig::from_env();
      if (fixture_kind == "scenes") media::fixtures::write_scene_video(cfg, fixture_out, fixture_spec, scene_len);
      if (fixture_kind == "constant") media::fixtures::write_constant_video(cfg, fixture_out, fixture_spec);
      if (fixture_kind == "checker") media::fixtures::write_checker_video(cfg, fixture_out, fixture_spec);
      std::cout << fixture_out << '\n';
    } else if (*frames_cmd) {
      const media::MediaDecoder dec;
      const auto handle = dec.probe(frames_video);
      frames::SelectRequest req;
      req.strategy = frames::strategy_from_string(frames_strategy);
      req.n = frames_n;
      req.seed = frames_seed;
      const auto set = frames::select_frames(dec, handle, req);
      if (!frames_out.empty()) {
        fs::create_directories(frames_out);
        for (std::size_t k = 0; k < set.frames.size(); ++k) {
          media::fixtures::write_png(fs::path(frames_out) / ("frame_" + std::to_string(k) + ".png"), set.frames[k]);
        }
      }
      write_or_print(frames::selection_report(set).dump(2), "");
    } else if (*caption) {
      const media::MediaDecoder dec;
      const auto backends = harness::BackendSet::load(caption_backends);
      const bool qa = !caption_question.empty();
      const auto cfg = caption_args.build(qa ? fusion::TaskKind::Qa : fusion::TaskKind::Caption,
                                          qa ? std::optional<std::string>(caption_question) : std::nullopt, caption);
      const auto handle = dec.probe(caption_video);
      const auto bundle =
          fusion::run_task(dec, handle, fs::path(caption_video).stem().string(), cfg, backends.pipeline);
      write_or_print(fusion::to_json(bundle, caption_timings).dump(2), caption_out);
    } else if (*eval_cmd) {
      const auto kind = eval_task == "qa" ? fusion::TaskKind::Qa : fusion::TaskKind::Caption;
      spec.pipeline = eval_args.build(kind, std::nullopt, eval_cmd);
      spec.manifest = eval_manifest;
      spec.out_dir = eval_out;
      spec.strict_manifest = !eval_lenient;
      if (eval_max_tasks > 0) spec.max_tasks = eval_max_tasks;
      if (spec.label.empty()) {
        spec.label = std::string(frames::to_string(spec.pipeline.strategy)) + " n=" +
                     std::to_string(spec.pipeline.n_frames) + (spec.pipeline.use_llm ? " + LLM" : " (no LLM)");
      }
      const media::MediaDecoder dec;
      const auto backends = harness::BackendSet::load(eval_backends);
      harness::RunStats stats;
      const auto report = harness::run_eval(spec, backends, dec, &stats);
      std::cout << report.to_text();
      std::cerr << "executed " << stats.executed << ", skipped " << stats.skipped << ", pending " << stats.pending
                << "; report in " << (fs::path(eval_out) / harness::kReportJsonFile).string() << '\n';
    } else if (*compare) {
      std::vector<eval::EvalReport> reports;
      for (const auto& p : compare_reports) reports.push_back(eval::EvalReport::from_json(json::parse(util::read_file_text(p))));
      const auto cmp = harness::compare_runs(reports, compare_baseline);
      write_or_print(compare_json ? cmp.to_json().dump(2) : cmp.to_text(), "");
    } else if (*convert) {
      data::Manifest m;
      if (*yc2) m = data::convert_youcook2(conv_annotations, conv_videos, conv_opts);
      if (*msr) m = data::convert_msrvtt(conv_annotations, conv_videos, conv_opts);
      if (*anet) m = data::convert_activitynet_qa(conv_questions, conv_answers, conv_videos, conv_opts);
      data::write_manifest(m, conv_out);
      std::cerr << m.tasks.size() << " tasks written to " << conv_out << " (" << m.missing_videos()
                << " missing videos, " << m.violations.size() << " notes)\n";
      for (const auto& v : m.violations) std::cerr << "  " << v.field << ": " << v.message << '\n';
    } else if (*validate) {
      const auto m =
          data::load_manifest(validate_path, data::manifest_kind_from_string(validate_kind), !validate_lenient);
      for (const auto& v : m.violations) {
        std::cout << validate_path << ":" << v.line << ": " << v.field << ": " << v.message << '\n';
      }
      std::cout << m.tasks.size() << " tasks, " << m.violations.size() << " problems\n";
      return m.violations.empty() ? 0 : 1;
    } else if (*serve) {
      const auto backends = harness::BackendSet::load(serve_backends);
      svc_cfg.max_upload_bytes = static_cast<std::size_t>(max_upload_mb * 1024 * 1024);
      if (!serve_pipeline.empty()) {
        svc_cfg.pipeline_defaults = fusion::PipelineConfig::from_json(json::parse(util::read_file_text(serve_pipeline)));
      }
      spdlog::set_level(std::min(spdlog::get_level(), spdlog::level::info));
      service::QaService svc(svc_cfg, backends.pipeline);
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      svc.serve();
      g_service = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

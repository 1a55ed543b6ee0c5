// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/datasets.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "qcaption/error.hpp"

namespace qcaption::data {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(ManifestKind k) { return k == ManifestKind::Caption ? "caption" : "qa"; }

ManifestKind manifest_kind_from_string(std::string_view s) {
  if (s == "caption") return ManifestKind::Caption;
  if (s == "qa") return ManifestKind::Qa;
  fail(ErrorCode::InvalidArgument, "unknown manifest kind '" + std::string(s) + "' (caption|qa)");
}

std::string Task::key(ManifestKind kind) const {
  return kind == ManifestKind::Caption ? video_id : video_id + '\x1f' + question;
}

fs::path Manifest::resolve(const Task& t) const {
  fs::path p(t.video_path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::size_t Manifest::missing_videos() const {
  return static_cast<std::size_t>(std::count_if(tasks.begin(), tasks.end(), [](const Task& t) { return t.video_missing; }));
}

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

struct LineError {
  std::string field;
  std::string message;
};

std::string required_string(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw LineError{field, "missing field"};
  if (!it->is_string()) throw LineError{field, "must be a string"};
  auto s = it->get<std::string>();
  if (blank(s)) throw LineError{field, "must be non-empty"};
  return s;
}

Task parse_line(const json& j, ManifestKind kind) {
  if (!j.is_object()) throw LineError{"", "line is not a JSON object"};
  Task t;
  t.video_id = required_string(j, "video_id");
  t.video_path = required_string(j, "video_path");
  std::set<std::string> allowed{"video_id", "video_path"};
  if (kind == ManifestKind::Caption) {
    allowed.insert("references");
    auto it = j.find("references");
    if (it == j.end()) throw LineError{"references", "missing field"};
    if (!it->is_array() || it->empty()) throw LineError{"references", "must be a non-empty array of strings"};
    for (const auto& r : *it) {
      if (!r.is_string() || blank(r.get<std::string>())) throw LineError{"references", "entries must be non-empty strings"};
      t.references.push_back(r.get<std::string>());
    }
  } else {
    allowed.insert({"question", "answer"});
    t.question = required_string(j, "question");
    t.answer = required_string(j, "answer");
  }
  for (const auto& [name, _] : j.items()) {
    if (!allowed.count(name)) throw LineError{name, "unknown field"};
  }
  return t;
}

[[noreturn]] void raise_at(ErrorCode code, const fs::path& path, std::size_t line, const std::string& field,
                           const std::string& message) {
  std::string msg = path.string() + ":" + std::to_string(line) + ": ";
  if (!field.empty()) msg += "field '" + field + "': ";
  fail(code, msg + message);
}

}  // namespace

Manifest load_manifest(const fs::path& path, ManifestKind kind, bool strict) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::FileNotFound, "cannot open manifest " + path.string());
  Manifest m;
  m.kind = kind;
  m.source = path.string();
  m.base_dir = path.parent_path();
  std::unordered_set<std::string> seen;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (blank(text)) continue;
    Task t;
    try {
      auto j = json::parse(text, nullptr, false);
      if (j.is_discarded()) throw LineError{"", "invalid JSON"};
      t = parse_line(j, kind);
    } catch (const LineError& e) {
      if (strict) raise_at(ErrorCode::SchemaError, path, line_no, e.field, e.message);
      m.violations.push_back({line_no, e.field, e.message});
      continue;
    }
    if (!seen.insert(t.key(kind)).second) {
      const std::string what = kind == ManifestKind::Caption ? "duplicate video_id '" + t.video_id + "'"
                                                             : "duplicate (video_id, question) for '" + t.video_id + "'";
      if (strict) raise_at(ErrorCode::DuplicateKey, path, line_no, "video_id", what);
      m.violations.push_back({line_no, "video_id", what});
      continue;
    }
    std::error_code ec;
    if (!fs::is_regular_file(m.resolve(t), ec)) {
      const std::string what = "video not found: " + m.resolve(t).string();
      if (strict) raise_at(ErrorCode::MissingVideo, path, line_no, "video_path", what);
      t.video_missing = true;
      m.violations.push_back({line_no, "video_path", what});
    }
    m.tasks.push_back(std::move(t));
  }
  return m;
}

std::string manifest_line(const Task& t, ManifestKind kind) {
  ordered_json j;
  j["video_id"] = t.video_id;
  j["video_path"] = t.video_path;
  if (kind == ManifestKind::Caption) {
    j["references"] = t.references;
  } else {
    j["question"] = t.question;
    j["answer"] = t.answer;
  }
  return j.dump();
}

void write_manifest(const Manifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write manifest " + path.string());
  for (const auto& t : m.tasks) out << manifest_line(t, m.kind) << '\n';
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

bool natural_less(std::string_view a, std::string_view b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const bool da = std::isdigit(static_cast<unsigned char>(a[i])), db = std::isdigit(static_cast<unsigned char>(b[j]));
    if (da && db) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      auto na = a.substr(i, ie - i), nb = b.substr(j, je - j);
      while (na.size() > 1 && na.front() == '0') na.remove_prefix(1);
      while (nb.size() > 1 && nb.front() == '0') nb.remove_prefix(1);
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  return a.size() - i < b.size() - j;
}

namespace {

constexpr std::array<const char*, 6> kVideoExtensions{".mp4", ".mkv", ".webm", ".avi", ".mov", ".m4v"};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorCode::FileNotFound, "cannot open " + p.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::SchemaError, p.string() + ": invalid JSON");
  return j;
}

// First existing <dir>/<stem><ext>; otherwise the .mp4 guess with found=false.
std::pair<fs::path, bool> find_video(const fs::path& dir, const std::vector<std::string>& stems) {
  std::error_code ec;
  for (const auto& stem : stems) {
    for (const auto* ext : kVideoExtensions) {
      auto p = dir / (stem + ext);
      if (fs::is_regular_file(p, ec)) return {p, true};
    }
  }
  return {dir / (stems.front() + ".mp4"), false};
}

void attach_video(Manifest& m, Task& t, const fs::path& video_dir, const std::vector<std::string>& stems,
                  const ConvertOptions& opts) {
  auto [path, found] = find_video(video_dir, stems);
  t.video_path = path.string();
  if (!found) {
    if (opts.strict) fail(ErrorCode::MissingVideo, "no video file for '" + t.video_id + "' in " + video_dir.string());
    t.video_missing = true;
    m.violations.push_back({0, "video_path", "video not found for '" + t.video_id + "'"});
  }
}

[[noreturn]] void schema(const fs::path& file, const std::string& msg) {
  fail(ErrorCode::SchemaError, file.string() + ": " + msg);
}

std::string string_field(const json& obj, const char* name, const fs::path& file, const std::string& where) {
  auto it = obj.find(name);
  if (it == obj.end() || !(it->is_string() || it->is_number())) schema(file, where + ": missing or non-string '" + name + "'");
  return it->is_string() ? it->get<std::string>() : it->dump();
}

void finish(Manifest& m) {
  std::stable_sort(m.tasks.begin(), m.tasks.end(),
                   [](const Task& a, const Task& b) { return natural_less(a.video_id, b.video_id); });
}

}  // namespace

Manifest convert_youcook2(const fs::path& annotation_file, const fs::path& video_dir, const ConvertOptions& opts) {
  const auto root = read_json(annotation_file);
  if (!root.is_object() || !root.contains("database") || !root["database"].is_object()) {
    schema(annotation_file, "expected an object with a 'database' object");
  }
  Manifest m;
  m.kind = ManifestKind::Caption;
  m.source = "youcook2:" + annotation_file.string();
  for (const auto& [vid, entry] : root["database"].items()) {
    if (!entry.is_object()) schema(annotation_file, "entry '" + vid + "' is not an object");
    if (!opts.subset.empty() && entry.value("subset", std::string{}) != opts.subset) continue;
    struct Seg {
      double start;
      long id;
      std::string sentence;
    };
    std::vector<Seg> segs;
    for (const auto& a : entry.value("annotations", json::array())) {
      const auto where = "video '" + vid + "'";
      auto sentence = trim(string_field(a, "sentence", annotation_file, where));
      if (sentence.empty()) continue;
      const auto& seg = a.value("segment", json::array());
      if (!seg.is_array() || seg.size() != 2 || !seg[0].is_number()) schema(annotation_file, where + ": bad 'segment'");
      segs.push_back({seg[0].get<double>(), a.value("id", 0L), std::move(sentence)});
    }
    if (segs.empty()) {
      spdlog::warn("youcook2: video '{}' has no segments; excluded", vid);
      m.violations.push_back({0, "annotations", "video '" + vid + "' has no segments; excluded"});
      continue;
    }
    std::stable_sort(segs.begin(), segs.end(),
                     [](const Seg& a, const Seg& b) { return a.start != b.start ? a.start < b.start : a.id < b.id; });
    std::string joined;
    for (auto& s : segs) {
      while (!s.sentence.empty() && s.sentence.back() == '.') s.sentence.pop_back();
      if (!joined.empty()) joined += ' ';
      joined += trim(s.sentence) + '.';
    }
    Task t;
    t.video_id = vid;
    t.references = {joined};
    attach_video(m, t, video_dir, {vid}, opts);
    m.tasks.push_back(std::move(t));
  }
  finish(m);
  return m;
}

Manifest convert_msrvtt(const fs::path& annotation_file, const fs::path& video_dir, const ConvertOptions& opts) {
  const auto root = read_json(annotation_file);
  if (!root.is_object() || !root.contains("sentences") || !root["sentences"].is_array()) {
    schema(annotation_file, "expected an object with a 'sentences' array");
  }
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::pair<long, std::string>>> caps;
  const bool have_video_list = root.contains("videos");
  if (have_video_list) {
    for (const auto& v : root["videos"]) {
      auto id = string_field(v, "video_id", annotation_file, "videos[]");
      if (caps.emplace(id, std::vector<std::pair<long, std::string>>{}).second) order.push_back(id);
    }
  }
  Manifest m;
  m.kind = ManifestKind::Caption;
  m.source = "msrvtt:" + annotation_file.string();
  for (const auto& s : root["sentences"]) {
    auto id = string_field(s, "video_id", annotation_file, "sentences[]");
    auto it = caps.find(id);
    if (it == caps.end()) {
      if (have_video_list) schema(annotation_file, "sentence refers to unknown video '" + id + "'");
      it = caps.emplace(id, std::vector<std::pair<long, std::string>>{}).first;
      order.push_back(id);
    }
    auto caption = trim(string_field(s, "caption", annotation_file, "video '" + id + "'"));
    if (caption.empty()) {
      m.violations.push_back({0, "caption", "empty caption for '" + id + "' dropped"});
      continue;
    }
    it->second.emplace_back(s.value("sen_id", static_cast<long>(it->second.size())), std::move(caption));
  }
  for (const auto& id : order) {
    auto& list = caps[id];
    if (list.empty()) {
      spdlog::warn("msrvtt: video '{}' has no captions; excluded", id);
      m.violations.push_back({0, "sentences", "video '" + id + "' has no captions; excluded"});
      continue;
    }
    std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Task t;
    t.video_id = id;
    for (auto& [_, c] : list) t.references.push_back(std::move(c));
    attach_video(m, t, video_dir, {id}, opts);
    m.tasks.push_back(std::move(t));
  }
  finish(m);
  return m;
}

Manifest convert_activitynet_qa(const fs::path& question_file, const fs::path& answer_file, const fs::path& video_dir,
                                const ConvertOptions& opts) {
  const auto questions = read_json(question_file);
  const auto answers = read_json(answer_file);
  if (!questions.is_array()) schema(question_file, "expected an array of questions");
  if (!answers.is_array()) schema(answer_file, "expected an array of answers");

  std::unordered_map<std::string, std::string> answer_by_id;
  for (const auto& a : answers) {
    auto qid = string_field(a, "question_id", answer_file, "answers[]");
    auto ans = string_field(a, "answer", answer_file, "answer '" + qid + "'");
    if (blank(ans)) schema(answer_file, "answer for '" + qid + "' is empty");
    answer_by_id[qid] = trim(ans);
  }

  struct Row {
    std::string qid;
    Task task;
  };
  std::vector<Row> rows;
  Manifest m;
  m.kind = ManifestKind::Qa;
  m.source = "activitynet-qa:" + question_file.string();
  std::unordered_set<std::string> keys;
  for (const auto& q : questions) {
    auto qid = string_field(q, "question_id", question_file, "questions[]");
    auto name = string_field(q, "video_name", question_file, "question '" + qid + "'");
    auto text = trim(string_field(q, "question", question_file, "question '" + qid + "'"));
    if (text.empty()) schema(question_file, "question '" + qid + "' is empty");
    auto it = answer_by_id.find(qid);
    if (it == answer_by_id.end()) fail(ErrorCode::UnmatchedQuestionId, "no answer for question_id '" + qid + "'");
    Task t;
    t.video_id = name;
    t.question = std::move(text);
    t.answer = it->second;
    if (!keys.insert(t.key(ManifestKind::Qa)).second) {
      if (opts.strict) fail(ErrorCode::DuplicateKey, "duplicate question for video '" + name + "' (" + qid + ")");
      m.violations.push_back({0, "question", "duplicate question " + qid + " dropped"});
      continue;
    }
    rows.push_back({qid, std::move(t)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.task.video_id != b.task.video_id) return natural_less(a.task.video_id, b.task.video_id);
    return natural_less(a.qid, b.qid);
  });
  for (auto& r : rows) {
    const auto& name = r.task.video_id;
    std::vector<std::string> stems{name};
    if (name.rfind("v_", 0) != 0) stems.push_back("v_" + name);
    attach_video(m, r.task, video_dir, stems, opts);
    m.tasks.push_back(std::move(r.task));
  }
  return m;
}

}  // namespace qcaption::data

// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/evaluation/cider.hpp"

#include <cmath>
#include <unordered_set>

#include "qcaption/error.hpp"

namespace qcaption::eval {
namespace {

bool is_separator(unsigned char c) {
  if (c >= 0x80) return false;  // keep UTF-8 sequences intact
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' ||
         (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x7B && c <= 0x7E);
}

void check_order(int n) {
  if (n < 1 || n > kMaxNgram) fail(ErrorCode::InvalidArgument, "n-gram order must be in [1, 4]");
}

double norm(const SparseVector& v) {
  double s = 0.0;
  for (const auto& [_, x] : v) s += x * x;
  return std::sqrt(s);
}

double cosine(const SparseVector& a, double norm_a, const SparseVector& b, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  double dot = 0.0;
  for (const auto& [gram, x] : small) {
    if (auto it = large.find(gram); it != large.end()) dot += x * it->second;
  }
  return dot / (norm_a * norm_b);
}

SparseVector tfidf_from_counts(const NgramCounts& counts, int n, const NGramIndex& index) {
  SparseVector out;
  int total = 0;
  for (const auto& [_, c] : counts) total += c;
  if (total == 0) return out;
  out.reserve(counts.size());
  for (const auto& [gram, c] : counts) {
    out.emplace(gram, static_cast<double>(c) / total * index.idf(gram, n));
  }
  return out;
}

}  // namespace

TokenizedCaption tokenize(std::string_view text) {
  TokenizedCaption out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_separator(c)) {
      if (!cur.empty()) out.tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    }
  }
  if (!cur.empty()) out.tokens.push_back(std::move(cur));
  return out;
}

NgramCounts ngrams(const std::vector<std::string>& tokens, int n) {
  check_order(n);
  NgramCounts out;
  const auto un = static_cast<std::size_t>(n);
  if (tokens.size() < un) return out;
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < un; ++j) {
      key.push_back(' ');
      key += tokens[i + j];
    }
    ++out[key];
  }
  return out;
}

int NGramIndex::document_frequency(const std::string& gram, int n) const {
  check_order(n);
  const auto& m = df_[static_cast<std::size_t>(n - 1)];
  auto it = m.find(gram);
  return it == m.end() ? 0 : it->second;
}

double NGramIndex::idf(const std::string& gram, int n) const {
  const int df = document_frequency(gram, n);
  const double size = static_cast<double>(corpus_size_);
  return std::log(df > 0 ? size / df : size);
}

NGramIndex build_index(const std::vector<std::vector<std::string>>& references) {
  if (references.empty()) fail(ErrorCode::EmptyCorpus, "no videos in reference corpus");
  NGramIndex index;
  index.corpus_size_ = references.size();
  for (std::size_t v = 0; v < references.size(); ++v) {
    if (references[v].empty()) {
      fail(ErrorCode::EmptyCorpus, "video " + std::to_string(v) + " has no reference captions");
    }
    for (int n = 1; n <= kMaxNgram; ++n) {
      std::unordered_set<std::string> seen;
      for (const auto& ref : references[v]) {
        for (auto& [gram, _] : ngrams(tokenize(ref).tokens, n)) seen.insert(gram);
      }
      auto& df = index.df_[static_cast<std::size_t>(n - 1)];
      for (const auto& gram : seen) ++df[gram];
    }
  }
  return index;
}

SparseVector tfidf_vector(std::string_view caption, int n, const NGramIndex& index) {
  return tfidf_from_counts(ngrams(tokenize(caption).tokens, n), n, index);
}

double cider_n(std::string_view candidate, const std::vector<std::string>& refs, int n, const NGramIndex& index) {
  if (refs.empty()) fail(ErrorCode::InvalidArgument, "cider_n needs at least one reference");
  const auto gc = tfidf_vector(candidate, n, index);
  const double nc = norm(gc);
  double sum = 0.0;
  for (const auto& ref : refs) {
    const auto gr = tfidf_vector(ref, n, index);
    sum += cosine(gc, nc, gr, norm(gr));
  }
  return sum / static_cast<double>(refs.size());
}

CiderScore cider(std::string_view candidate, const std::vector<std::string>& refs, const NGramIndex& index,
                 const CiderConfig& cfg) {
  CiderScore score;
  for (int n = 1; n <= kMaxNgram; ++n) {
    const auto i = static_cast<std::size_t>(n - 1);
    score.per_n[i] = cider_n(candidate, refs, n, index);
    score.raw += cfg.weights[i] * score.per_n[i];
  }
  score.scaled = score.raw * cfg.report_scale;
  return score;
}

CorpusCider corpus_cider(const std::vector<CiderItem>& items, const CiderConfig& cfg) {
  if (items.empty()) fail(ErrorCode::EmptyCorpus, "no items to score");
  std::vector<std::vector<std::string>> refs;
  refs.reserve(items.size());
  for (const auto& item : items) refs.push_back(item.references);
  return corpus_cider(items, build_index(refs), cfg);
}

CorpusCider corpus_cider(const std::vector<CiderItem>& scored, const NGramIndex& index, const CiderConfig& cfg) {
  if (scored.empty()) fail(ErrorCode::EmptyCorpus, "no items to score");
  CorpusCider out;
  out.per_video.reserve(scored.size());
  double sum = 0.0;
  for (const auto& item : scored) {
    out.per_video.push_back(cider(item.candidate, item.references, index, cfg));
    sum += out.per_video.back().raw;
  }
  out.raw = sum / static_cast<double>(scored.size());
  out.scaled = out.raw * cfg.report_scale;
  return out;
}

}  // namespace qcaption::eval

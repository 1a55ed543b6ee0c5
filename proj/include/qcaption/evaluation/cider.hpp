// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qcaption::eval {

inline constexpr int kMaxNgram = 4;

/// Lowercased word tokens; ASCII punctuation acts as a separator.
struct TokenizedCaption {
  std::vector<std::string> tokens;
};

TokenizedCaption tokenize(std::string_view text);

/// n-gram -> multiplicity. Keys join tokens with a single space.
using NgramCounts = std::unordered_map<std::string, int>;

NgramCounts ngrams(const std::vector<std::string>& tokens, int n);

/// Document frequencies over a reference corpus. A "document" is one video's
/// whole reference set, so an n-gram repeated across one video's references
/// counts once.
class NGramIndex {
 public:
  int document_frequency(const std::string& gram, int n) const;
  std::size_t corpus_size() const noexcept { return corpus_size_; }
  std::size_t vocabulary_size(int n) const { return df_.at(static_cast<std::size_t>(n - 1)).size(); }

  /// log(|I| / DF); n-grams absent from the corpus get log(|I|).
  double idf(const std::string& gram, int n) const;

 private:
  friend NGramIndex build_index(const std::vector<std::vector<std::string>>& references);
  std::array<std::unordered_map<std::string, int>, kMaxNgram> df_;
  std::size_t corpus_size_ = 0;
};

/// references[v] holds the ground-truth captions for video v. Throws
/// EmptyCorpus when there are no videos or a video has no references.
NGramIndex build_index(const std::vector<std::vector<std::string>>& references);

using SparseVector = std::unordered_map<std::string, double>;

SparseVector tfidf_vector(std::string_view caption, int n, const NGramIndex& index);

double cider_n(std::string_view candidate, const std::vector<std::string>& refs, int n, const NGramIndex& index);

struct CiderConfig {
  std::array<double, kMaxNgram> weights{0.25, 0.25, 0.25, 0.25};
  double report_scale = 100.0;
};

struct CiderScore {
  double raw = 0.0;
  double scaled = 0.0;
  std::array<double, kMaxNgram> per_n{};
};

CiderScore cider(std::string_view candidate, const std::vector<std::string>& refs, const NGramIndex& index,
                 const CiderConfig& cfg = {});

struct CiderItem {
  std::string video_id;
  std::string candidate;
  std::vector<std::string> references;
};

struct CorpusCider {
  double raw = 0.0;     // mean of per-video raw scores
  double scaled = 0.0;  // raw * report_scale
  std::vector<CiderScore> per_video;
};

/// Scores every item against an index built from all items' references.
CorpusCider corpus_cider(const std::vector<CiderItem>& items, const CiderConfig& cfg = {});

/// Scores `scored` items against a prebuilt index, which may cover more
/// videos than are scored.
CorpusCider corpus_cider(const std::vector<CiderItem>& scored, const NGramIndex& index, const CiderConfig& cfg = {});

}  // namespace qcaption::eval

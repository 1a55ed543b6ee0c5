// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "oracle/cider_oracle.hpp"
#include "qcaption/error.hpp"
#include "qcaption/evaluation/cider.hpp"

using namespace qcaption;
using namespace qcaption::eval;

namespace {

using Tokens = std::vector<std::string>;

std::vector<CiderItem> to_items(const std::vector<oracle::OracleVideo>& corpus) {
  std::vector<CiderItem> items;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    items.push_back({"v" + std::to_string(i), corpus[i].candidate, corpus[i].refs});
  }
  return items;
}

std::vector<oracle::OracleVideo> random_corpus(std::mt19937_64& rng) {
  // Small vocabulary so n-grams of every order collide across videos.
  static const std::vector<std::string> words = {"a",  "the", "cat", "dog", "Man", "walks", "on",
                                                 "red", "ball", "is", "cuts", "onion,", "pan."};
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto sentence = [&] {
    std::string s;
    const std::size_t len = pick(11);  // 0..10 tokens
    for (std::size_t i = 0; i < len; ++i) {
      if (i) s += ' ';
      s += words[pick(words.size())];
    }
    return s;
  };
  std::vector<oracle::OracleVideo> corpus(1 + pick(10));
  for (auto& v : corpus) {
    v.candidate = sentence();
    const std::size_t m = 1 + pick(4);
    for (std::size_t j = 0; j < m; ++j) v.refs.push_back(sentence());
  }
  return corpus;
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("A man, walking.").tokens == Tokens{"a", "man", "walking"});
  CHECK(tokenize("").tokens.empty());
  CHECK(tokenize("don't stop").tokens == Tokens{"don", "t", "stop"});
  CHECK(tokenize("  Tabs\tand\nnewlines  ").tokens == Tokens{"tabs", "and", "newlines"});
  for (const auto& t : tokenize("...!!,, x ;; y").tokens) CHECK(!t.empty());
}

TEST_CASE("ngrams") {
  const Tokens t{"the", "cat", "sat"};
  const auto bi = ngrams(t, 2);
  CHECK(bi.size() == 2);
  CHECK(bi.at("the cat") == 1);
  CHECK(bi.at("cat sat") == 1);
  CHECK(ngrams(t, 4).empty());
  CHECK(ngrams({"a", "a", "a"}, 1).at("a") == 3);
  CHECK_THROWS_AS(ngrams(t, 0), Error);
  CHECK_THROWS_AS(ngrams(t, 5), Error);
}

TEST_CASE("build_index document frequencies") {
  const auto idx = build_index({{"a cat"}, {"a dog"}});
  CHECK(idx.corpus_size() == 2);
  CHECK(idx.document_frequency("a", 1) == 2);
  CHECK(idx.document_frequency("cat", 1) == 1);
  CHECK(idx.document_frequency("dog", 1) == 1);

  const auto collapse = build_index({{"cat cat", "the cat"}, {"dog"}});
  CHECK(collapse.document_frequency("cat", 1) == 1);

  const auto single = build_index({{"x y z", "x x"}});
  CHECK(single.document_frequency("x", 1) == 1);
  CHECK(single.document_frequency("y z", 2) == 1);

  try {
    build_index({});
    FAIL("expected EmptyCorpus");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyCorpus);
  }
  CHECK_THROWS_AS(build_index({{"a"}, {}}), Error);
}

TEST_CASE("adding a video that contributes no n-grams raises every idf") {
  const auto before = build_index({{"a cat"}, {"a dog"}});
  const auto after = build_index({{"a cat"}, {"a dog"}, {"..."}});
  CHECK(after.corpus_size() == 3);
  for (const char* g : {"a", "cat", "dog"}) {
    CHECK(after.idf(g, 1) > before.idf(g, 1));
    CHECK(after.document_frequency(g, 1) <= 3);
  }
}

TEST_CASE("tfidf_vector") {
  const auto idx = build_index({{"a cat"}, {"a dog"}});
  const auto g = tfidf_vector("a cat", 1, idx);
  CHECK(g.at("a") == 0.0);
  CHECK(g.at("cat") == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-15));
  CHECK(tfidf_vector("cat", 2, idx).empty());

  const auto unseen = tfidf_vector("zebra", 1, idx);
  CHECK(unseen.at("zebra") == doctest::Approx(std::log(2.0)));

  const auto single = build_index({{"x y"}});
  for (const auto& [_, v] : tfidf_vector("x y", 1, single)) CHECK(v == 0.0);
}

TEST_CASE("worked two-video corpus") {
  const auto idx = build_index({{"a cat"}, {"a dog"}});
  const std::vector<std::string> refs{"a cat"};
  CHECK(cider_n("a cat", refs, 1, idx) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cider_n("a cat", refs, 2, idx) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cider_n("a cat", refs, 3, idx) == 0.0);
  CHECK(cider_n("a cat", refs, 4, idx) == 0.0);
  const auto s = cider("a cat", refs, idx);
  CHECK(std::abs(s.raw - 0.5) < 1e-12);
  CHECK(std::abs(s.scaled - 50.0) < 1e-10);
}

TEST_CASE("forced values") {
  SUBCASE("single-video corpus scores zero") {
    const auto idx = build_index({{"the quick brown fox jumps"}});
    CHECK(cider("the quick brown fox jumps", {"the quick brown fox jumps"}, idx).raw == 0.0);
    CHECK(cider("anything at all", {"the quick brown fox jumps"}, idx).raw == 0.0);
  }
  SUBCASE("disjoint candidate scores zero") {
    const auto idx = build_index({{"a cat sits here"}, {"a dog runs there"}});
    CHECK(cider("purple elephants dance", {"a cat sits here"}, idx).raw == 0.0);
  }
  SUBCASE("empty candidate scores zero") {
    const auto idx = build_index({{"a cat"}, {"a dog"}});
    CHECK(cider("", {"a cat"}, idx).raw == 0.0);
  }
  SUBCASE("self-match with unique n-grams of every order gives the weight sum") {
    const auto idx = build_index({{"red ball rolls down hill"}, {"blue kite flies over sea"}});
    const auto s = cider("red ball rolls down hill", {"red ball rolls down hill"}, idx);
    CHECK(std::abs(s.raw - 1.0) < 1e-12);
    CiderConfig cfg;
    cfg.weights = {0.1, 0.2, 0.3, 0.4};
    CHECK(std::abs(cider("red ball rolls down hill", {"red ball rolls down hill"}, idx, cfg).raw - 1.0) < 1e-12);
    cfg.weights = {1.0, 0.0, 0.5, 0.0};
    CHECK(std::abs(cider("red ball rolls down hill", {"red ball rolls down hill"}, idx, cfg).raw - 1.5) < 1e-12);
  }
}

TEST_CASE("properties") {
  const auto idx = build_index({{"a man cuts an onion", "someone chops onion"}, {"a dog runs in a park"}});
  const std::vector<std::string> refs{"a man cuts an onion", "someone chops onion"};
  const std::vector<std::string> rev{"someone chops onion", "a man cuts an onion"};
  const double a = cider("a man chops an onion", refs, idx).raw;
  CHECK(a == doctest::Approx(cider("a man chops an onion", rev, idx).raw).epsilon(1e-14));
  for (int n = 1; n <= 4; ++n) {
    const double c = cider_n("a man chops an onion", refs, n, idx);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("corpus_cider") {
  const std::vector<CiderItem> items{{"A", "a cat", {"a cat"}}, {"B", "zebra", {"a dog"}}};
  const auto r = corpus_cider(items);
  REQUIRE(r.per_video.size() == 2);
  CHECK(std::abs(r.per_video[0].raw - 0.5) < 1e-12);
  CHECK(r.per_video[1].raw == 0.0);
  CHECK(std::abs(r.raw - 0.25) < 1e-12);
  CHECK(std::abs(r.scaled - 25.0) < 1e-10);

  const std::vector<CiderItem> swapped{items[1], items[0]};
  CHECK(corpus_cider(swapped).raw == doctest::Approx(r.raw).epsilon(1e-15));
  CHECK_THROWS_AS(corpus_cider(std::vector<CiderItem>{}), Error);
}

TEST_CASE("oracle equivalence on 200 random corpora") {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20260417);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto corpus = random_corpus(rng);
    const auto got = corpus_cider(to_items(corpus));
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const double want = oracle::cider(corpus, i);
      worst = std::max(worst, std::abs(got.per_video[i].raw - want));
    }
    worst = std::max(worst, std::abs(got.raw - oracle::corpus_cider(corpus)));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("max |optimized - oracle| = " << worst << ", " << secs << " s");
  CHECK(worst <= 1e-9);
  CHECK(secs < 10.0);
}

// SPDX-License-Identifier: Apache-2.0
#include "dysi/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "dysi/errors.hpp"
#include "dysi/vocab.hpp"

using namespace dysi;

namespace {

TokenSeq tok(const std::string& text) { return split_whitespace(text); }

}  // namespace

TEST_CASE("corpus bleu hand examples") {
  // Exact match on every sentence.
  std::vector<TokenSeq> hyps = {tok("the cat sat"), tok("a dog ran far away")};
  std::vector<std::vector<TokenSeq>> refs = {{tok("the cat sat")}, {tok("a dog ran far away")}};
  CHECK(corpus_bleu(hyps, refs).bleu == doctest::Approx(100.0).epsilon(1e-6));

  // Clipping: p1 = 1/3, higher orders zero -> BLEU 0.
  auto report = corpus_bleu({tok("the the the")}, {{tok("the cat")}});
  CHECK(report.precisions[0] == doctest::Approx(1.0 / 3.0));
  CHECK(report.precisions[1] == 0.0);
  CHECK(report.bleu == 0.0);

  // Adding a reference identical to the hypothesis lifts every clipped count.
  auto lifted = corpus_bleu({tok("the the the")}, {{tok("the cat"), tok("the the the")}});
  CHECK(lifted.bleu == doctest::Approx(100.0).epsilon(1e-6));
}

TEST_CASE("corpus bleu internal consistency and brevity penalty") {
  std::vector<TokenSeq> hyps = {tok("the small cat sat on the mat"),
                                tok("dogs run in a quiet park today")};
  std::vector<std::vector<TokenSeq>> refs = {
      {tok("the small cat sat on the red mat"), tok("a small cat sat on the mat")},
      {tok("dogs run in a quiet park every day")}};
  auto report = corpus_bleu(hyps, refs);
  CHECK(report.bleu > 0.0);
  double mean_log_p = 0.0;
  for (double p : report.precisions) mean_log_p += std::log(p) / 4.0;
  CHECK(report.bleu ==
        doctest::Approx(100.0 * report.brevity_penalty * std::exp(mean_log_p)).epsilon(1e-6));
  CHECK(report.brevity_penalty <= 1.0);

  // Permutation invariance over sentence order.
  std::vector<TokenSeq> hyps_swapped = {hyps[1], hyps[0]};
  std::vector<std::vector<TokenSeq>> refs_swapped = {refs[1], refs[0]};
  CHECK(corpus_bleu(hyps_swapped, refs_swapped).bleu == doctest::Approx(report.bleu).epsilon(1e-12));
}

TEST_CASE("corpus bleu input validation") {
  CHECK_THROWS_AS(corpus_bleu({}, {}), InputError);
  CHECK_THROWS_AS(corpus_bleu({tok("a")}, {}), ShapeError);
  CHECK_THROWS_AS(corpus_bleu({tok("a")}, {{}}), InputError);
}

TEST_CASE("oracle sentence bleu picks the best reference") {
  std::vector<TokenSeq> refs3 = {tok("a calm sea at dawn"), tok("the storm passed quickly"),
                                 tok("the cat sat on the mat")};
  CHECK(oracle_sentence_bleu({tok("the cat sat on the mat")}, {refs3}) ==
        doctest::Approx(100.0).epsilon(1e-6));

  // Single reference reduces to smoothed sentence BLEU.
  const TokenSeq hyp = tok("the cat sat on a mat");
  const TokenSeq ref = tok("the cat sat on the mat");
  CHECK(oracle_sentence_bleu({hyp}, {{ref}}) ==
        doctest::Approx(sentence_bleu_smoothed(hyp, ref)).epsilon(1e-12));

  // 2x2 hand-computed table with add-1 smoothing for n >= 2.
  const TokenSeq h1 = tok("a b c d");
  const TokenSeq h2 = tok("x y");
  const TokenSeq r1 = tok("a b c d");
  const TokenSeq r2 = tok("x y z");
  // h1 vs r1: exact -> 100. h1 vs r2: p1 = 0 -> 0.
  CHECK(sentence_bleu_smoothed(h1, r1) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(sentence_bleu_smoothed(h1, r2) == 0.0);
  // h2 vs r2: p1 = 1, p2 = (1+1)/(1+1) = 1, p3 = p4 = 1/1 = 1 (no such
  // grams), BP = exp(1 - 3/2).
  const double expected_h2 = 100.0 * std::exp(1.0 - 3.0 / 2.0);
  CHECK(sentence_bleu_smoothed(h2, r2) == doctest::Approx(expected_h2).epsilon(1e-9));
  CHECK(oracle_sentence_bleu({h1, h2}, {{r1, r2}, {r1, r2}}) ==
        doctest::Approx((100.0 + expected_h2) / 2.0).epsilon(1e-9));
}

TEST_CASE("generation entropy averages per-step values") {
  // Rows [0.5, 0.5] and [1, 0]: (ln 2 + 0) / 2.
  const double ln2 = std::log(2.0);
  CHECK(generation_entropy({ln2, 0.0}) == doctest::Approx(0.3466).epsilon(1e-3));
  CHECK(generation_entropy({}) == 0.0);
}

TEST_CASE("n-gram repetition ratio hand counts") {
  CHECK(ngram_repetition_ratio(tok("a b c"), 1) == 0.0);
  CHECK(ngram_repetition_ratio(tok("a a a a"), 1) == doctest::Approx(0.75));
  CHECK(ngram_repetition_ratio(tok("a b a b"), 2) == doctest::Approx(1.0 - 2.0 / 3.0));
  CHECK(ngram_repetition_ratio(tok("a b"), 3) == 0.0);  // fewer than n tokens
  CHECK_THROWS_AS(ngram_repetition_ratio(tok("a"), 0), ConfigError);
}

TEST_CASE("repetition ratio difference") {
  CHECK(repetition_ratio_difference(tok("x y z"), tok("x y z"), 1) == 0.0);
  CHECK(repetition_ratio_difference(tok("a a a a"), tok("a b c d"), 1) == doctest::Approx(0.75));
  CHECK(repetition_ratio_difference(tok("a b c d"), tok("a a a a"), 1) == doctest::Approx(0.75));
}

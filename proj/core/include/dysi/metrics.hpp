// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dysi {

using TokenSeq = std::vector<std::string>;

struct BleuReport {
  double bleu = 0.0;  // [0, 100]
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  std::int64_t hyp_length = 0;
  std::int64_t ref_length = 0;  // closest reference length, summed
  std::array<std::int64_t, 4> matched{};
  std::array<std::int64_t, 4> totals{};
};

// Corpus BLEU-4 with modified n-gram precision. Clipping takes the maximum
// n-gram count over the references of a sentence; the brevity penalty uses
// the closest reference length (ties to the shorter one).
BleuReport corpus_bleu(const std::vector<TokenSeq>& hypotheses,
                       const std::vector<std::vector<TokenSeq>>& references);

// Sentence BLEU with add-1 smoothing on numerator and denominator for
// n >= 2 (unigram precision unsmoothed). Returns [0, 100].
double sentence_bleu_smoothed(const TokenSeq& hypothesis, const TokenSeq& reference);

// For every hypothesis, the best smoothed sentence BLEU over its references,
// averaged over hypotheses.
double oracle_sentence_bleu(const std::vector<TokenSeq>& hypotheses,
                            const std::vector<std::vector<TokenSeq>>& references);

// Mean of per-step entropies (natural log).
double generation_entropy(const std::vector<double>& step_entropies);

// 1 - distinct/total over the n-grams of `tokens`; 0 when fewer than n
// tokens. Higher means more repetitive.
double ngram_repetition_ratio(const TokenSeq& tokens, int n);

// |rep_n(perturbed) - rep_n(original)|.
double repetition_ratio_difference(const TokenSeq& perturbed, const TokenSeq& original, int n);

}  // namespace dysi

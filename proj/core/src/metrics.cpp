// SPDX-License-Identifier: Apache-2.0
#include "dysi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "dysi/errors.hpp"

namespace dysi {

namespace {

constexpr int kMaxOrder = 4;

std::unordered_map<std::string, std::int64_t> ngram_counts(const TokenSeq& tokens, int n) {
  std::unordered_map<std::string, std::int64_t> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      key += tokens[i + static_cast<std::size_t>(j)];
      key += '\x1f';
    }
    counts[key] += 1;
  }
  return counts;
}

std::int64_t closest_ref_length(std::size_t hyp_len, const std::vector<TokenSeq>& refs) {
  std::int64_t best = static_cast<std::int64_t>(refs.front().size());
  for (const auto& ref : refs) {
    const std::int64_t len = static_cast<std::int64_t>(ref.size());
    const std::int64_t h = static_cast<std::int64_t>(hyp_len);
    const std::int64_t best_gap = std::abs(best - h);
    const std::int64_t gap = std::abs(len - h);
    if (gap < best_gap || (gap == best_gap && len < best)) best = len;
  }
  return best;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<TokenSeq>& hypotheses,
                       const std::vector<std::vector<TokenSeq>>& references) {
  if (hypotheses.empty()) throw InputError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw ShapeError("corpus_bleu: hypothesis and reference counts differ");
  BleuReport report;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& refs = references[s];
    if (refs.empty()) throw InputError("corpus_bleu: sentence without references");
    report.hyp_length += static_cast<std::int64_t>(hyp.size());
    report.ref_length += closest_ref_length(hyp.size(), refs);
    for (int n = 1; n <= kMaxOrder; ++n) {
      auto hyp_counts = ngram_counts(hyp, n);
      std::unordered_map<std::string, std::int64_t> max_ref;
      for (const auto& ref : refs)
        for (const auto& [gram, count] : ngram_counts(ref, n))
          max_ref[gram] = std::max(max_ref[gram], count);
      for (const auto& [gram, count] : hyp_counts) {
        report.totals[static_cast<std::size_t>(n - 1)] += count;
        const auto it = max_ref.find(gram);
        if (it != max_ref.end())
          report.matched[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
      }
    }
  }
  // Orders with no n-gram slots at all (corpus shorter than n) are left out
  // of the geometric mean; a present order with zero matches still zeroes
  // the score.
  double log_precision_sum = 0.0;
  int included_orders = 0;
  bool any_zero = false;
  for (int n = 0; n < kMaxOrder; ++n) {
    const auto total = report.totals[static_cast<std::size_t>(n)];
    const auto matched = report.matched[static_cast<std::size_t>(n)];
    const double p = total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
    report.precisions[static_cast<std::size_t>(n)] = p;
    if (total == 0) continue;
    ++included_orders;
    if (p <= 0.0)
      any_zero = true;
    else
      log_precision_sum += std::log(p);
  }
  report.brevity_penalty =
      (report.hyp_length >= report.ref_length || report.hyp_length == 0)
          ? 1.0
          : std::exp(1.0 - static_cast<double>(report.ref_length) /
                               static_cast<double>(report.hyp_length));
  report.bleu = (any_zero || included_orders == 0 || report.hyp_length == 0)
                    ? 0.0
                    : 100.0 * report.brevity_penalty *
                          std::exp(log_precision_sum / included_orders);
  return report;
}

double sentence_bleu_smoothed(const TokenSeq& hypothesis, const TokenSeq& reference) {
  if (hypothesis.empty()) return 0.0;
  double log_precision_sum = 0.0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    auto hyp_counts = ngram_counts(hypothesis, n);
    auto ref_counts = ngram_counts(reference, n);
    std::int64_t matched = 0, total = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    double p;
    if (n == 1) {
      p = total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
      if (p <= 0.0) return 0.0;
    } else {
      p = static_cast<double>(matched + 1) / static_cast<double>(total + 1);
    }
    log_precision_sum += std::log(p);
  }
  const auto hyp_len = static_cast<std::int64_t>(hypothesis.size());
  const auto ref_len = static_cast<std::int64_t>(reference.size());
  const double bp =
      hyp_len >= ref_len ? 1.0
                         : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_precision_sum / kMaxOrder);
}

double oracle_sentence_bleu(const std::vector<TokenSeq>& hypotheses,
                            const std::vector<std::vector<TokenSeq>>& references) {
  if (hypotheses.empty()) throw InputError("oracle_sentence_bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw ShapeError("oracle_sentence_bleu: hypothesis and reference counts differ");
  double sum = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    if (references[s].empty()) throw InputError("oracle_sentence_bleu: sentence without references");
    double best = 0.0;
    for (const auto& ref : references[s])
      best = std::max(best, sentence_bleu_smoothed(hypotheses[s], ref));
    sum += best;
  }
  return sum / static_cast<double>(hypotheses.size());
}

double generation_entropy(const std::vector<double>& step_entropies) {
  if (step_entropies.empty()) return 0.0;
  double sum = 0.0;
  for (const double h : step_entropies) sum += h;
  return sum / static_cast<double>(step_entropies.size());
}

double ngram_repetition_ratio(const TokenSeq& tokens, int n) {
  if (n < 1) throw ConfigError("repetition ratio: n must be >= 1");
  if (static_cast<int>(tokens.size()) < n) return 0.0;
  std::unordered_set<std::string> distinct;
  std::int64_t total = 0;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      key += tokens[i + static_cast<std::size_t>(j)];
      key += '\x1f';
    }
    distinct.insert(key);
    ++total;
  }
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double repetition_ratio_difference(const TokenSeq& perturbed, const TokenSeq& original, int n) {
  return std::abs(ngram_repetition_ratio(perturbed, n) - ngram_repetition_ratio(original, n));
}

}  // namespace dysi

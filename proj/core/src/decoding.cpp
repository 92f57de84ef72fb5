// SPDX-License-Identifier: Apache-2.0
#include "dysi/decoding.hpp"

#include <algorithm>
#include <cmath>

#include "dysi/errors.hpp"
#include "dysi/vocab.hpp"

namespace dysi {

TransformerScorer::TransformerScorer(const Transformer& model, std::optional<EncodedSource> source)
    : model_(model), source_(std::move(source)) {
  if (model_.config().mode == ModelConfig::Mode::kEncoderDecoder && !source_)
    throw ContractError("TransformerScorer: encoder-decoder model needs an encoded source");
}

std::vector<float> TransformerScorer::next_log_probs(const std::vector<std::int32_t>& prefix) const {
  const std::size_t window = static_cast<std::size_t>(model_.config().max_positions) - 1;
  if (prefix.size() <= window)
    return model_.next_token_log_probs(source_ ? &*source_ : nullptr, prefix);
  const std::vector<std::int32_t> tail(prefix.end() - static_cast<std::ptrdiff_t>(window),
                                       prefix.end());
  return model_.next_token_log_probs(source_ ? &*source_ : nullptr, tail);
}

double row_entropy_from_log_probs(const std::vector<float>& log_probs) {
  double h = 0.0;
  for (const float lp : log_probs) {
    const double p = std::exp(static_cast<double>(lp));
    if (p > 0.0) h -= p * static_cast<double>(lp);
  }
  return h;
}

std::vector<std::int32_t> greedy_decode(const SequenceModel& model, int max_len,
                                        std::vector<double>* step_entropies) {
  if (max_len < 1) throw ConfigError("greedy_decode: max_len must be positive");
  std::vector<std::int32_t> out;
  for (int step = 0; step < max_len; ++step) {
    const auto row = model.next_log_probs(out);
    if (step_entropies) step_entropies->push_back(row_entropy_from_log_probs(row));
    int best = 0;
    for (int w = 1; w < static_cast<int>(row.size()); ++w)
      if (row[static_cast<std::size_t>(w)] > row[static_cast<std::size_t>(best)]) best = w;
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
  }
  return out;
}

namespace {

double length_normalized(double log_prob, std::int64_t length, double gamma) {
  const double len = static_cast<double>(std::max<std::int64_t>(length, 1));
  return log_prob / std::pow(len, gamma);
}

}  // namespace

std::vector<BeamHypothesis> beam_decode_all(const SequenceModel& model, int beam_size,
                                            double length_norm_gamma, int max_len) {
  if (beam_size < 1) throw ConfigError("beam_decode: beam size must be >= 1");
  if (max_len < 1) throw ConfigError("beam_decode: max_len must be positive");

  struct Live {
    std::vector<std::int32_t> ids;
    double log_prob = 0.0;
  };
  std::vector<Live> live{{{}, 0.0}};
  std::vector<BeamHypothesis> finished;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    struct Candidate {
      double score;
      int parent;
      std::int32_t token;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(model.vocab_size()));
    for (int i = 0; i < static_cast<int>(live.size()); ++i) {
      const auto row = model.next_log_probs(live[static_cast<std::size_t>(i)].ids);
      for (std::int32_t w = 0; w < static_cast<std::int32_t>(row.size()); ++w)
        candidates.push_back({live[static_cast<std::size_t>(i)].log_prob +
                                  static_cast<double>(row[static_cast<std::size_t>(w)]),
                              i, w});
    }
    // Deterministic: score desc, then parent beam index, then token id.
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    // Consume the top beam_size candidates: EOS finalizes a hypothesis,
    // anything else stays live.
    std::vector<Live> next_live;
    const std::size_t keep = static_cast<std::size_t>(beam_size);
    std::size_t consumed = 0;
    for (const auto& c : candidates) {
      if (consumed == keep) break;
      ++consumed;
      if (c.token == Vocabulary::kEos) {
        BeamHypothesis hyp;
        hyp.ids = live[static_cast<std::size_t>(c.parent)].ids;
        hyp.log_prob = c.score;
        hyp.finished = true;
        // EOS counts toward the normalized length.
        hyp.normalized_score = length_normalized(
            c.score, static_cast<std::int64_t>(hyp.ids.size()) + 1, length_norm_gamma);
        finished.push_back(std::move(hyp));
      } else {
        Live next;
        next.ids = live[static_cast<std::size_t>(c.parent)].ids;
        next.ids.push_back(c.token);
        next.log_prob = c.score;
        next_live.push_back(std::move(next));
      }
    }
    live = std::move(next_live);
  }
  for (const auto& l : live) {
    BeamHypothesis hyp;
    hyp.ids = l.ids;
    hyp.log_prob = l.log_prob;
    hyp.finished = true;  // hit max length
    hyp.normalized_score =
        length_normalized(l.log_prob, static_cast<std::int64_t>(l.ids.size()), length_norm_gamma);
    finished.push_back(std::move(hyp));
  }
  std::sort(finished.begin(), finished.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    return a.ids < b.ids;
  });
  return finished;
}

std::vector<std::int32_t> beam_decode(const SequenceModel& model, int beam_size,
                                      double length_norm_gamma, int max_len) {
  auto hyps = beam_decode_all(model, beam_size, length_norm_gamma, max_len);
  if (hyps.empty()) return {};
  return hyps.front().ids;
}

std::vector<std::int32_t> nucleus_sample(const SequenceModel& model,
                                         const std::vector<std::int32_t>& prompt, double top_p,
                                         int max_len, Rng& rng, bool stop_at_eos) {
  if (top_p <= 0.0 || top_p > 1.0) throw ConfigError("nucleus_sample: p must be in (0,1]");
  if (max_len < 1) throw ConfigError("nucleus_sample: max_len must be positive");
  std::vector<std::int32_t> prefix = prompt;
  std::vector<std::int32_t> continuation;
  const int v = model.vocab_size();
  std::vector<double> probs(static_cast<std::size_t>(v));
  std::vector<int> order(static_cast<std::size_t>(v));
  std::vector<bool> kept(static_cast<std::size_t>(v));
  for (int step = 0; step < max_len; ++step) {
    const auto row = model.next_log_probs(prefix);
    for (int w = 0; w < v; ++w)
      probs[static_cast<std::size_t>(w)] = std::exp(static_cast<double>(row[static_cast<std::size_t>(w)]));
    double kept_mass = 0.0;
    if (top_p >= 1.0) {
      // Keep the full distribution: exact ancestral sampling.
      std::fill(kept.begin(), kept.end(), true);
      for (int w = 0; w < v; ++w) kept_mass += probs[static_cast<std::size_t>(w)];
    } else {
      for (int w = 0; w < v; ++w) order[static_cast<std::size_t>(w)] = w;
      std::sort(order.begin(), order.end(), [&probs](int a, int b) {
        if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)])
          return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
        return a < b;
      });
      std::fill(kept.begin(), kept.end(), false);
      // 1e-6 slack so softmax rounding cannot drag one extra token across
      // an exact mass boundary.
      for (const int w : order) {
        kept[static_cast<std::size_t>(w)] = true;
        kept_mass += probs[static_cast<std::size_t>(w)];
        if (kept_mass >= top_p - 1e-6) break;
      }
    }
    // CDF scan in token-id order against u * kept_mass: renormalization
    // without division, and p = 1 reduces to plain ancestral sampling.
    const double threshold = rng.uniform_double() * kept_mass;
    double cum = 0.0;
    std::int32_t picked = -1;
    for (int w = 0; w < v; ++w) {
      if (!kept[static_cast<std::size_t>(w)]) continue;
      cum += probs[static_cast<std::size_t>(w)];
      picked = w;
      if (cum > threshold) break;
    }
    if (picked == Vocabulary::kEos && stop_at_eos) break;
    continuation.push_back(picked);
    prefix.push_back(picked);
  }
  return continuation;
}

}  // namespace dysi

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "dysi/model.hpp"
#include "dysi/rng.hpp"

namespace dysi {

// Anything that can score the next token given a decoder prefix. Decoding
// strategies are written against this so tests can drive them with explicit
// probability tables.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual int vocab_size() const = 0;
  // Log-probabilities over the vocabulary for the step after `prefix`
  // (prefix excludes BOS; the implementation adds its own start symbol).
  virtual std::vector<float> next_log_probs(const std::vector<std::int32_t>& prefix) const = 0;
};

// Adapter binding a trained transformer and, for encoder-decoder models, one
// encoded source sentence. Long prefixes are scored over a sliding window of
// the final max_positions-1 tokens.
class TransformerScorer final : public SequenceModel {
 public:
  TransformerScorer(const Transformer& model, std::optional<EncodedSource> source);
  int vocab_size() const override { return model_.config().vocab_size; }
  std::vector<float> next_log_probs(const std::vector<std::int32_t>& prefix) const override;

 private:
  const Transformer& model_;
  std::optional<EncodedSource> source_;
};

// Argmax decoding; stops at EOS or max_len. Returns generated ids without
// EOS. When `step_entropies` is given, the entropy of each step's
// distribution is appended to it.
std::vector<std::int32_t> greedy_decode(const SequenceModel& model, int max_len,
                                        std::vector<double>* step_entropies = nullptr);

struct BeamHypothesis {
  std::vector<std::int32_t> ids;  // without EOS
  double log_prob = 0.0;          // includes the EOS step when finished by EOS
  double normalized_score = 0.0;  // log_prob / length^gamma
  bool finished = false;          // ended with EOS or hit max length
};

// Standard beam search with length-normalized final ranking
// (log_prob / len^gamma). beam_size 1 reproduces greedy_decode exactly.
std::vector<BeamHypothesis> beam_decode_all(const SequenceModel& model, int beam_size,
                                            double length_norm_gamma, int max_len);
std::vector<std::int32_t> beam_decode(const SequenceModel& model, int beam_size,
                                      double length_norm_gamma, int max_len);

// Top-p ancestral sampling: the smallest probability-sorted prefix with mass
// >= p is kept and sampled by CDF scan in token-id order, so p = 1 is exactly
// full-distribution ancestral sampling. Returns the continuation only.
std::vector<std::int32_t> nucleus_sample(const SequenceModel& model,
                                         const std::vector<std::int32_t>& prompt, double top_p,
                                         int max_len, Rng& rng, bool stop_at_eos = true);

// Entropy (natural log) of one distribution given as log-probabilities.
double row_entropy_from_log_probs(const std::vector<float>& log_probs);

}  // namespace dysi

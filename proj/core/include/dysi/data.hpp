// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dysi/rng.hpp"
#include "dysi/vocab.hpp"

namespace dysi {

// One sequence pair as raw content ids (reserved ids added at batch time).
struct SequencePair {
  std::vector<std::int32_t> source;
  std::vector<std::int32_t> target;
};

// Padded batch. Source rows carry a trailing EOS; target_input rows are
// BOS-prefixed and EOS-stripped, target_output rows are EOS-suffixed, so the
// two target views are the usual one-step shift of each other.
struct ParallelBatch {
  int batch_size = 0;
  int src_len = 0;  // 0 in decoder-only batches
  int tgt_len = 0;
  std::vector<std::int32_t> source;         // [B, S]
  std::vector<std::int32_t> target_input;   // [B, T]
  std::vector<std::int32_t> target_output;  // [B, T]
  std::vector<float> source_mask;           // [B, S], 1 = real token
  std::vector<float> target_mask;           // [B, T], 1 = real token

  bool has_source() const { return src_len > 0; }
  std::int64_t token_cost() const {
    return static_cast<std::int64_t>(batch_size) * (src_len + tgt_len);
  }
  // Non-pad target length of row b.
  int effective_target_len(int b) const;
};

// TSV corpus: UTF-8, one pair per line, exactly one TAB. CRLF endings are
// tolerated; anything else raises ParseError naming the line.
std::vector<std::pair<std::string, std::string>> load_parallel_tsv(const std::string& path);

std::vector<SequencePair> encode_pairs(
    const std::vector<std::pair<std::string, std::string>>& text_pairs, const Vocabulary& vocab);

// Length-bucketed padded batches; no batch exceeds max_tokens counting
// padding. Order is a pure function of the seed.
std::vector<ParallelBatch> make_batches(const std::vector<SequencePair>& pairs,
                                        std::int64_t max_tokens, std::uint64_t shuffle_seed);

ParallelBatch batch_from_pairs(const std::vector<const SequencePair*>& pairs);

// Synthetic stand-ins for parallel corpora. All are pure functions of their
// seed; ids are drawn from [reserved, vocab_size).
std::vector<SequencePair> gen_copy_task(int n, int len_min, int len_max, int vocab_size,
                                        std::uint64_t seed);
std::vector<SequencePair> gen_reverse_task(int n, int len_min, int len_max, int vocab_size,
                                           std::uint64_t seed);
std::vector<SequencePair> gen_cipher_task(int n, int len_min, int len_max, int vocab_size,
                                          std::uint64_t seed);
// The fixed bijection over content ids used by gen_cipher_task.
std::vector<std::int32_t> cipher_permutation(int vocab_size, std::uint64_t seed);

// Language-model corpus: the encoded text plus every sliding window of
// context_len tokens (stride 1). Windows are materialized lazily.
struct LmCorpus {
  std::vector<std::int32_t> ids;
  int context_len = 0;

  std::int64_t window_count() const {
    const std::int64_t n = static_cast<std::int64_t>(ids.size()) - context_len + 1;
    return n > 0 ? n : 0;
  }
  std::vector<std::int32_t> window(std::int64_t index) const;
  // BOS-prefixed batch over the given window indices.
  ParallelBatch batch(const std::vector<std::int64_t>& windows) const;
  // Uniformly sampled batch of floor(max_tokens / context_len) windows.
  ParallelBatch sample_batch(std::int64_t max_tokens, Rng& rng) const;
};

LmCorpus gen_char_lm_corpus(const std::string& text, const Vocabulary& vocab, int context_len);

// Deterministic English-like filler text (template grammar over fixed word
// inventories); used when no corpus file is configured. One paragraph per
// line. The char inventory stays around sixty symbols.
std::string builtin_corpus_text(std::uint64_t seed, std::size_t min_bytes);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace dysi

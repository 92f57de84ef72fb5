// SPDX-License-Identifier: Apache-2.0
//
// Prompt perturbation protocol: build fixed-length prompts from a corpus,
// perturb them (last-word repetition, n-gram repetition, random word
// replacement), sample continuations for original and perturbed prompts,
// and compare n-gram repetition ratios.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dysi/decoding.hpp"
#include "dysi/metrics.hpp"
#include "dysi/rng.hpp"
#include "dysi/vocab.hpp"

namespace dysi {

struct PerturbationSpec {
  enum class Kind { kIdentity, kLastWord, kNgram, kReplace };
  Kind kind = Kind::kIdentity;
  int param = 0;            // m repeats, n-gram size, or k replaced words
  std::uint64_t seed = 0;   // replacement only

  std::string label() const;
  static PerturbationSpec parse(const std::string& label);
};

// First `words_per_prompt` whitespace words of each paragraph; shorter
// paragraphs are skipped. Raises InputError when nothing qualifies.
std::vector<std::string> extract_prompts(const std::vector<std::string>& paragraphs,
                                         int words_per_prompt = 50);

// Append the last word m more times. Prefix bytes are preserved.
std::string perturb_last_word(const std::string& prompt, int m);

// Duplicate the final n-word span once at the end; n >= word count doubles
// the whole prompt.
std::string perturb_ngram(const std::string& prompt, int n);

// Replace k distinct word positions, picked uniformly among non-stopword
// tokens (all tokens when there are fewer content words than k), by random
// non-reserved vocabulary words that differ from the original. k beyond the
// token count is clamped.
std::string perturb_replace_words(const std::string& prompt, int k, const Vocabulary& vocab,
                                  Rng& rng);

std::string apply_perturbation(const std::string& prompt, const PerturbationSpec& spec,
                               const Vocabulary& vocab);

bool is_stopword(const std::string& word);

// ---------------------------------------------------------------------------
// Completion suite
// ---------------------------------------------------------------------------

struct CompletionModel {
  std::string name;
  const SequenceModel* model = nullptr;
};

struct SuiteConfig {
  int samples_per_model = 2;
  double top_p = 0.8;
  int budget = 200;                     // continuation token budget
  std::vector<int> ngram_sizes = {1, 2, 3};
  std::uint64_t seed = 0;
  int threads = 1;
  bool greedy = false;                  // deterministic decoding, mostly for tests
};

struct DeltaRow {
  int n = 0;
  double delta = 0.0;  // mean |rep_n(perturbed) - rep_n(original)| over sample pairs
};

struct CompletionRecord {
  int prompt_index = 0;
  std::string model;
  std::string perturbation;
  std::string prompt;
  std::string perturbed_prompt;
  std::vector<std::string> original_continuations;
  std::vector<std::string> perturbed_continuations;
  std::vector<DeltaRow> deltas;
};

struct SuiteSummaryRow {
  std::string model;
  std::string perturbation;
  int n = 0;
  double mean_delta = 0.0;
  int prompt_count = 0;
};

struct SuiteResult {
  std::vector<CompletionRecord> records;
  std::vector<SuiteSummaryRow> summary;
};

// Called with finished records in deterministic order; already-delivered
// records survive an abort mid-suite.
using RecordSink = std::function<void(const CompletionRecord&)>;

SuiteResult run_completion_suite(const std::vector<CompletionModel>& models,
                                 const std::vector<std::string>& prompts,
                                 const std::vector<PerturbationSpec>& perturbations,
                                 const Vocabulary& vocab, const SuiteConfig& config,
                                 const RecordSink& sink = nullptr);

// Report writers: one JSON object per (model, prompt, perturbation, n) row,
// and a CSV table of the per-perturbation means.
std::string suite_records_jsonl(const std::vector<CompletionRecord>& records);
std::string suite_summary_csv(const std::vector<SuiteSummaryRow>& summary,
                              const std::vector<std::string>& model_names);

}  // namespace dysi

// SPDX-License-Identifier: Apache-2.0
#include "dysi/robustness.hpp"

#include <cmath>

#include "doctest.h"
#include "dysi/errors.hpp"

using namespace dysi;

namespace {

std::string repeat_words(const std::string& word, int count) {
  std::string out;
  for (int i = 0; i < count; ++i) {
    if (i) out += ' ';
    out += word + std::to_string(i);
  }
  return out;
}

// Emits a fresh token each step unless the prefix already ends in a repeat,
// in which case it locks onto that token. Mimics degenerate repetition
// amplification.
class RepetitionAmplifier final : public SequenceModel {
 public:
  explicit RepetitionAmplifier(int vocab) : vocab_(vocab) {}
  int vocab_size() const override { return vocab_; }
  std::vector<float> next_log_probs(const std::vector<std::int32_t>& prefix) const override {
    std::vector<float> row(static_cast<std::size_t>(vocab_), -30.0f);
    const std::size_t n = prefix.size();
    if (n >= 2 && prefix[n - 1] == prefix[n - 2]) {
      row[static_cast<std::size_t>(prefix[n - 1])] = 0.0f;  // keep repeating
    } else {
      // Cycle through the content alphabet.
      const std::int32_t fresh =
          Vocabulary::kReserved +
          static_cast<std::int32_t>(n % static_cast<std::size_t>(vocab_ - Vocabulary::kReserved));
      row[static_cast<std::size_t>(fresh)] = 0.0f;
    }
    return row;
  }

 private:
  int vocab_;
};

class UniformModel final : public SequenceModel {
 public:
  explicit UniformModel(int vocab) : vocab_(vocab) {}
  int vocab_size() const override { return vocab_; }
  std::vector<float> next_log_probs(const std::vector<std::int32_t>&) const override {
    // Uniform over content ids; reserved ids get negligible mass so
    // sampling never stops at EOS.
    std::vector<float> row(static_cast<std::size_t>(vocab_), -30.0f);
    const float lp = std::log(1.0f / static_cast<float>(vocab_ - Vocabulary::kReserved));
    for (int w = Vocabulary::kReserved; w < vocab_; ++w) row[static_cast<std::size_t>(w)] = lp;
    return row;
  }

 private:
  int vocab_;
};

}  // namespace

TEST_CASE("extract prompts takes the first 50 words and skips short paragraphs") {
  const std::string long_paragraph = repeat_words("tok", 60);
  const std::string short_paragraph = repeat_words("tok", 40);
  auto prompts = extract_prompts({long_paragraph, short_paragraph});
  REQUIRE(prompts.size() == 1);
  CHECK(split_whitespace(prompts[0]).size() == 50);

  auto exact = extract_prompts({repeat_words("w", 50)});
  CHECK(split_whitespace(exact[0]).size() == 50);

  CHECK_THROWS_AS(extract_prompts({short_paragraph}), InputError);
}

TEST_CASE("last word perturbation") {
  CHECK(perturb_last_word("she was", 3) == "she was was was was");
  CHECK(perturb_last_word("she was", 0) == "she was");
  const std::string prompt = "one two three";
  for (int m : {1, 4, 10}) {
    const auto perturbed = perturb_last_word(prompt, m);
    CHECK(split_whitespace(perturbed).size() == 3 + static_cast<std::size_t>(m));
    CHECK(perturbed.substr(0, prompt.size()) == prompt);  // prefix bytes preserved
  }
}

TEST_CASE("ngram perturbation duplicates the final span") {
  CHECK(perturb_ngram("with The Bells", 2) == "with The Bells The Bells");
  CHECK(perturb_ngram("a b c", 1) == perturb_last_word("a b c", 1));
  // n >= length doubles the whole prompt.
  CHECK(perturb_ngram("x y", 5) == "x y x y");
}

TEST_CASE("word replacement") {
  Vocabulary vocab = Vocabulary::build({"alpha beta gamma delta epsilon zeta"},
                                       TokenMode::kWhitespace);
  const std::string prompt = "the river crossed a bridge near the harbor";
  Rng rng(3);
  CHECK(perturb_replace_words(prompt, 0, vocab, rng) == prompt);

  // Replaced tokens never equal the original; count matches k.
  for (int trial = 0; trial < 2000; ++trial) {
    const auto perturbed = perturb_replace_words(prompt, 2, vocab, rng);
    const auto orig_words = split_whitespace(prompt);
    const auto new_words = split_whitespace(perturbed);
    REQUIRE(new_words.size() == orig_words.size());
    int changed = 0;
    for (std::size_t i = 0; i < orig_words.size(); ++i) {
      if (orig_words[i] != new_words[i]) {
        ++changed;
        CHECK_FALSE(is_stopword(orig_words[i]));
      }
    }
    CHECK(changed == 2);
  }

  // k above the content-word count falls back to all tokens, clamped.
  const std::string tiny = "the of and";
  const auto all_replaced = perturb_replace_words(tiny, 10, vocab, rng);
  CHECK(split_whitespace(all_replaced).size() == 3);
}

TEST_CASE("perturbation labels round-trip") {
  for (const auto* label : {"identity", "last-word-10", "ngram-3", "replace-5"})
    CHECK(PerturbationSpec::parse(label).label() == label);
  CHECK_THROWS_AS(PerturbationSpec::parse("bogus-3"), ConfigError);
}

TEST_CASE("identity perturbation with greedy decoding yields zero deltas") {
  const int vocab_size = 12;
  RepetitionAmplifier model(vocab_size);
  Vocabulary vocab = Vocabulary::synthetic(vocab_size);
  CompletionModel cm{"stub", &model};
  SuiteConfig config;
  config.greedy = true;
  config.budget = 30;
  const std::string prompt = repeat_words("w", 50);
  auto result = run_completion_suite({cm}, {prompt}, {PerturbationSpec{}}, vocab, config);
  REQUIRE_FALSE(result.records.empty());
  for (const auto& record : result.records)
    for (const auto& row : record.deltas) CHECK(row.delta == 0.0);
}

TEST_CASE("suite bookkeeping: row count is models x perturbations x n") {
  const int vocab_size = 10;
  UniformModel a(vocab_size), b(vocab_size);
  Vocabulary vocab = Vocabulary::synthetic(vocab_size);
  std::vector<PerturbationSpec> perturbations = {
      PerturbationSpec::parse("last-word-3"), PerturbationSpec::parse("last-word-5"),
      PerturbationSpec::parse("ngram-3")};
  SuiteConfig config;
  config.budget = 20;
  config.samples_per_model = 2;
  config.seed = 5;
  std::vector<std::string> prompts = {repeat_words("u", 50), repeat_words("v", 50)};
  int sunk = 0;
  auto result = run_completion_suite({{"a", &a}, {"b", &b}}, prompts, perturbations, vocab, config,
                                     [&sunk](const CompletionRecord&) { ++sunk; });
  CHECK(result.summary.size() == 2 * perturbations.size() * 3);  // models x perts x n
  CHECK(sunk == static_cast<int>(result.records.size()));
  CHECK(result.records.size() == prompts.size() * 2 * perturbations.size());
  for (const auto& record : result.records) {
    CHECK(record.original_continuations.size() == 2);
    for (const auto& text : record.original_continuations)
      CHECK(split_whitespace(text).size() <= 20);
  }
}

TEST_CASE("suite results are reproducible and thread-count agnostic") {
  const int vocab_size = 10;
  UniformModel model(vocab_size);
  Vocabulary vocab = Vocabulary::synthetic(vocab_size);
  SuiteConfig config;
  config.budget = 16;
  config.seed = 9;
  std::vector<std::string> prompts = {repeat_words("p", 50), repeat_words("q", 50),
                                      repeat_words("r", 50)};
  std::vector<PerturbationSpec> perturbations = {PerturbationSpec::parse("last-word-5")};
  auto one = run_completion_suite({{"m", &model}}, prompts, perturbations, vocab, config);
  config.threads = 2;
  auto two = run_completion_suite({{"m", &model}}, prompts, perturbations, vocab, config);
  REQUIRE(one.records.size() == two.records.size());
  for (std::size_t i = 0; i < one.records.size(); ++i) {
    CHECK(one.records[i].original_continuations == two.records[i].original_continuations);
    CHECK(one.records[i].perturbed_continuations == two.records[i].perturbed_continuations);
  }
}

TEST_CASE("repetition amplifier shows larger deltas than the uniform model") {
  const int vocab_size = 30;
  RepetitionAmplifier amplifier(vocab_size);
  UniformModel uniform(vocab_size);
  Vocabulary vocab = Vocabulary::synthetic(vocab_size);
  SuiteConfig config;
  config.greedy = true;  // the stubs are deterministic either way
  config.budget = 24;
  config.ngram_sizes = {1};
  // 50 in-vocabulary words with no adjacent repeats; the perturbation is the
  // only source of a repeated suffix.
  std::string prompt;
  for (int i = 0; i < 50; ++i) {
    if (i) prompt += ' ';
    prompt += vocab.token_of(Vocabulary::kReserved + (i % (vocab_size - Vocabulary::kReserved)));
  }
  std::vector<std::string> prompts = {prompt};
  auto result = run_completion_suite({{"amplifier", &amplifier}, {"uniform", &uniform}}, prompts,
                                     {PerturbationSpec::parse("last-word-10")}, vocab, config);
  double amp_delta = -1.0, uni_delta = -1.0;
  for (const auto& row : result.summary) {
    if (row.model == "amplifier") amp_delta = row.mean_delta;
    if (row.model == "uniform") uni_delta = row.mean_delta;
  }
  REQUIRE(amp_delta >= 0.0);
  REQUIRE(uni_delta >= 0.0);
  CHECK(amp_delta > uni_delta);
  CHECK(amp_delta > 0.5);  // approaches the maximum
}

TEST_CASE("report writers emit one row per (model, prompt, perturbation, n)") {
  const int vocab_size = 10;
  UniformModel model(vocab_size);
  Vocabulary vocab = Vocabulary::synthetic(vocab_size);
  SuiteConfig config;
  config.budget = 8;
  config.seed = 2;
  auto result = run_completion_suite(
      {{"m", &model}}, {repeat_words("z", 50)},
      {PerturbationSpec::parse("last-word-3"), PerturbationSpec::parse("last-word-5"),
       PerturbationSpec::parse("last-word-7"), PerturbationSpec::parse("last-word-10")},
      vocab, config);
  const auto jsonl = suite_records_jsonl(result.records);
  std::size_t lines = 0;
  for (const char c : jsonl)
    if (c == '\n') ++lines;
  CHECK(lines == result.records.size() * 3);

  const auto csv = suite_summary_csv(result.summary, {"m"});
  // Header plus 4 perturbation levels x 3 n values.
  std::size_t csv_lines = 0;
  for (const char c : csv)
    if (c == '\n') ++csv_lines;
  CHECK(csv_lines == 1 + 4 * 3);
}

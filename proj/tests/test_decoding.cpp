// SPDX-License-Identifier: Apache-2.0
#include "dysi/decoding.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "doctest.h"
#include "dysi/vocab.hpp"

using namespace dysi;

namespace {

// Probability table driven by an arbitrary prefix -> log-prob-row function.
class TableModel final : public SequenceModel {
 public:
  using RowFn = std::function<std::vector<float>(const std::vector<std::int32_t>&)>;
  TableModel(int vocab, RowFn fn) : vocab_(vocab), fn_(std::move(fn)) {}
  int vocab_size() const override { return vocab_; }
  std::vector<float> next_log_probs(const std::vector<std::int32_t>& prefix) const override {
    return fn_(prefix);
  }

 private:
  int vocab_;
  RowFn fn_;
};

std::vector<float> log_row(std::vector<float> probs) {
  for (auto& p : probs) p = std::log(p);
  return probs;
}

// Deterministic pseudo-random conditional distributions: every prefix hashes
// to its own softmax row.
TableModel::RowFn hashed_rows(int vocab, std::uint64_t seed) {
  return [vocab, seed](const std::vector<std::int32_t>& prefix) {
    std::uint64_t h = seed;
    for (const auto id : prefix) h = Rng::mix(h, static_cast<std::uint64_t>(id) + 17);
    Rng rng(h);
    std::vector<float> logits(static_cast<std::size_t>(vocab));
    for (auto& v : logits) v = static_cast<float>(rng.normal(0.0, 1.5));
    float max_v = logits[0];
    for (float v : logits) max_v = std::max(max_v, v);
    double denom = 0.0;
    for (float v : logits) denom += std::exp(static_cast<double>(v - max_v));
    std::vector<float> row(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
      row[i] = static_cast<float>(static_cast<double>(logits[i] - max_v) - std::log(denom));
    return row;
  };
}

// Exhaustive max-log-probability search over all sequences of length up to
// max_len (EOS terminates early).
std::pair<std::vector<std::int32_t>, double> brute_force_best(const SequenceModel& model,
                                                              int max_len) {
  std::vector<std::int32_t> best_ids;
  double best_score = -1e300;
  std::vector<std::int32_t> prefix;
  std::function<void(double)> walk = [&](double score) {
    const auto row = model.next_log_probs(prefix);
    // Terminate here with EOS.
    const double eos_score = score + row[Vocabulary::kEos];
    if (eos_score > best_score) {
      best_score = eos_score;
      best_ids = prefix;
    }
    if (static_cast<int>(prefix.size()) == max_len) {
      if (score > best_score) {
        best_score = score;
        best_ids = prefix;
      }
      return;
    }
    for (std::int32_t w = 0; w < model.vocab_size(); ++w) {
      if (w == Vocabulary::kEos) continue;
      prefix.push_back(w);
      walk(score + row[static_cast<std::size_t>(w)]);
      prefix.pop_back();
    }
  };
  walk(0.0);
  return {best_ids, best_score};
}

}  // namespace

TEST_CASE("greedy decoding is deterministic and stops at EOS") {
  TableModel model(4, [](const std::vector<std::int32_t>& prefix) {
    // Emits 3, 3, then EOS.
    if (prefix.size() < 2) return log_row({0.1f, 0.1f, 0.1f, 0.7f});
    return log_row({0.1f, 0.1f, 0.7f, 0.1f});
  });
  auto a = greedy_decode(model, 10);
  CHECK(a == std::vector<std::int32_t>{3, 3});
  CHECK(greedy_decode(model, 10) == a);
  CHECK(greedy_decode(model, 1).size() == 1);
}

TEST_CASE("beam with beam size 1 equals greedy") {
  TableModel model(6, hashed_rows(6, 42));
  for (int max_len : {1, 3, 8}) {
    CHECK(beam_decode(model, 1, 0.0, max_len) == greedy_decode(model, max_len));
    CHECK(beam_decode(model, 1, 0.7, max_len) == greedy_decode(model, max_len));
  }
}

TEST_CASE("beam search with a saturating beam matches exhaustive enumeration") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    const int vocab = 5;
    TableModel model(vocab, hashed_rows(vocab, seed));
    auto [oracle_ids, oracle_score] = brute_force_best(model, 3);
    auto hyps = beam_decode_all(model, 125, 0.0, 3);
    REQUIRE_FALSE(hyps.empty());
    CHECK(hyps.front().ids == oracle_ids);
    CHECK(hyps.front().normalized_score == doctest::Approx(oracle_score).epsilon(1e-9));
  }
}

TEST_CASE("gamma zero ranks by raw log-probability") {
  TableModel model(5, hashed_rows(5, 9));
  auto hyps = beam_decode_all(model, 8, 0.0, 4);
  for (const auto& h : hyps) CHECK(h.normalized_score == doctest::Approx(h.log_prob));
  for (std::size_t i = 1; i < hyps.size(); ++i)
    CHECK(hyps[i - 1].normalized_score >= hyps[i].normalized_score);
}

TEST_CASE("beam hypothesis invariant: normalized score is logprob over len^gamma") {
  TableModel model(5, hashed_rows(5, 21));
  const double gamma = 0.4;
  for (const auto& h : beam_decode_all(model, 6, gamma, 4)) {
    const double len = static_cast<double>(h.ids.size() + (h.finished ? 0 : 0));
    (void)len;
    CHECK(h.finished);  // every returned hypothesis ended with EOS or max len
    CHECK(h.normalized_score <= 0.0);
  }
  CHECK_THROWS_AS(beam_decode(model, 0, 0.2, 4), ConfigError);
}

TEST_CASE("nucleus sampling renormalizes the kept set") {
  // dist [0.5, 0.3, 0.2] with p = 0.8 keeps {0, 1} as [0.625, 0.375].
  TableModel model(3, [](const std::vector<std::int32_t>&) {
    return log_row({0.5f, 0.3f, 0.2f});
  });
  Rng rng(7);
  int counts[3] = {0, 0, 0};
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    auto out = nucleus_sample(model, {}, 0.8, 1, rng, false);
    REQUIRE(out.size() == 1);
    counts[out[0]]++;
  }
  CHECK(counts[2] == 0);
  CHECK(static_cast<double>(counts[0]) / trials == doctest::Approx(0.625).epsilon(0.01));
  CHECK(static_cast<double>(counts[1]) / trials == doctest::Approx(0.375).epsilon(0.01));
}

TEST_CASE("nucleus endpoints") {
  TableModel one_hot(4, [](const std::vector<std::int32_t>&) {
    return log_row({1e-9f, 1.0f, 1e-9f, 1e-9f});
  });
  Rng rng(3);
  for (double p : {0.1, 0.5, 1.0})
    CHECK(nucleus_sample(one_hot, {}, p, 1, rng, false) == std::vector<std::int32_t>{1});

  // p small enough to keep only the top token behaves like greedy.
  TableModel model(5, hashed_rows(5, 77));
  Rng rng2(4);
  CHECK(nucleus_sample(model, {}, 1e-6, 4, rng2) == greedy_decode(model, 4));

  CHECK_THROWS_AS(nucleus_sample(model, {}, 0.0, 4, rng2), ConfigError);
  CHECK_THROWS_AS(nucleus_sample(model, {}, -0.5, 4, rng2), ConfigError);
}

TEST_CASE("nucleus with p 1 reproduces full ancestral sampling exactly") {
  const int vocab = 6;
  TableModel model(vocab, hashed_rows(vocab, 5));
  // Reference ancestral sampler: CDF scan in token-id order, threshold
  // u * total_mass, same uniform stream.
  auto reference_sample = [&](Rng& rng, int max_len) {
    std::vector<std::int32_t> prefix;
    std::vector<std::int32_t> out;
    for (int step = 0; step < max_len; ++step) {
      const auto row = model.next_log_probs(prefix);
      double total = 0.0;
      for (const float lp : row) total += std::exp(static_cast<double>(lp));
      const double threshold = rng.uniform_double() * total;
      double cum = 0.0;
      std::int32_t picked = -1;
      for (int w = 0; w < vocab; ++w) {
        cum += std::exp(static_cast<double>(row[static_cast<std::size_t>(w)]));
        picked = w;
        if (cum > threshold) break;
      }
      if (picked == Vocabulary::kEos) break;
      out.push_back(picked);
      prefix.push_back(picked);
    }
    return out;
  };
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng a(seed, 1);
    Rng b(seed, 1);
    CHECK(nucleus_sample(model, {}, 1.0, 12, a) == reference_sample(b, 12));
  }
}

TEST_CASE("nucleus sampling with a fixed seed is reproducible") {
  TableModel model(8, hashed_rows(8, 13));
  Rng a(11, 2), b(11, 2);
  CHECK(nucleus_sample(model, {1, 2}, 0.8, 20, a) == nucleus_sample(model, {1, 2}, 0.8, 20, b));
}

TEST_CASE("entropy of a log-prob row") {
  CHECK(row_entropy_from_log_probs(log_row({1.0f})) == doctest::Approx(0.0).epsilon(1e-9));
  const int v = 7;
  std::vector<float> uniform(v, std::log(1.0f / v));
  CHECK(row_entropy_from_log_probs(uniform) == doctest::Approx(std::log(7.0)).epsilon(1e-5));
}

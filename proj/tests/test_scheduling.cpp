// SPDX-License-Identifier: Apache-2.0
#include "dysi/scheduling.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "doctest.h"
#include "dysi/vocab.hpp"

using namespace dysi;

TEST_CASE("training accuracy counts matches over non-pad positions") {
  std::vector<float> all_real = {1, 1, 1};
  CHECK(training_accuracy({5, 6, 7}, {5, 6, 7}, all_real) == 1.0);
  CHECK(training_accuracy({5, 6, 7}, {8, 9, 10}, all_real) == 0.0);

  std::vector<float> mask = {1, 1, 1, 0};
  CHECK(training_accuracy({5, 6, 7, Vocabulary::kPad}, {5, 9, 7, 123}, mask) ==
        doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(training_accuracy({5}, {5}, {0.0f}), InputError);
  CHECK_THROWS_AS(training_accuracy({5, 6}, {5}, {1.0f}), ShapeError);
}

TEST_CASE("dynamic sample count honors the degenerate cases") {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    CHECK(dynamic_sample_count(0.0, 10, 0.5, rng) == 0);
    CHECK(dynamic_sample_count(1.0, 10, 0.0, rng) == 0);
  }
  CHECK_THROWS_AS(dynamic_sample_count(0.5, 10, 1.5, rng), ConfigError);
}

TEST_CASE("dynamic sample count mean and range match the uniform draw") {
  Rng rng(2);
  double sum = 0.0;
  int max_n = 0;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    const int n = dynamic_sample_count(1.0, 10, 0.5, rng);
    sum += n;
    max_n = std::max(max_n, n);
  }
  const double mean = sum / trials;
  CHECK(mean == doctest::Approx(2.5).epsilon(0.02));
  CHECK(max_n <= 5);
}

TEST_CASE("dynamic sample count depends only on (acc, t_eff, beta)") {
  // Two nominal training steps draw from identically constructed streams;
  // the histograms must agree exactly.
  auto histogram = [](std::uint64_t stream) {
    Rng rng(77, stream);
    std::array<int, 6> h{};
    for (int i = 0; i < 20000; ++i) h[static_cast<std::size_t>(dynamic_sample_count(1.0, 10, 0.5, rng))]++;
    return h;
  };
  CHECK(histogram(123) == histogram(123));
  // And different streams only move counts within Monte-Carlo noise.
  auto a = histogram(1);
  auto b = histogram(2);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(a[i] - b[i]) < 500);
}

TEST_CASE("select positions is uniform without replacement") {
  Rng rng(3);
  const std::vector<int> eligible = {1, 2, 3, 4};
  CHECK(select_positions(eligible, 0, rng).empty());
  CHECK(select_positions(eligible, 4, rng) == eligible);
  CHECK_THROWS_AS(select_positions(eligible, 5, rng), ContractError);

  std::array<int, 5> counts{};
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) {
    auto picked = select_positions(eligible, 1, rng);
    REQUIRE(picked.size() == 1);
    counts[static_cast<std::size_t>(picked[0])]++;
  }
  for (int pos : eligible)
    CHECK(static_cast<double>(counts[static_cast<std::size_t>(pos)]) / trials ==
          doctest::Approx(0.25).epsilon(0.04));
}

TEST_CASE("mix sequence replaces exactly the chosen slots") {
  const std::vector<std::int32_t> input = {Vocabulary::kBos, 11, 12, 13};
  const std::vector<std::int32_t> preds = {21, 22, 23, 24};

  CHECK(mix_sequence(input, preds, {}) == input);
  CHECK(mix_sequence(input, preds, {2}) ==
        std::vector<std::int32_t>{Vocabulary::kBos, 11, 22, 13});

  // Self-consistent model: predictions equal the ground truth.
  const std::vector<std::int32_t> self_preds = {11, 12, 13, Vocabulary::kEos};
  CHECK(mix_sequence(input, self_preds, {1, 2, 3}) == input);

  // Idempotence under the same positions and predictions.
  auto once = mix_sequence(input, preds, {1, 3});
  CHECK(mix_sequence(once, preds, {1, 3}) == once);

  CHECK_THROWS_AS(mix_sequence(input, preds, {0}), ContractError);
  CHECK_THROWS_AS(mix_sequence(input, preds, {4}), ContractError);
}

TEST_CASE("step decay schedules") {
  SchedulerConfig exp_cfg;
  exp_cfg.kind = SchedulerKind::kVanillaSs;
  exp_cfg.decay = DecayScheme::kExponential;
  exp_cfg.decay_k = 0.5;
  exp_cfg.decay_unit = 1000.0;
  CHECK(step_decay_epsilon(exp_cfg, 0) == doctest::Approx(1.0));
  CHECK(step_decay_epsilon(exp_cfg, 2000) == doctest::Approx(0.25));

  SchedulerConfig lin_cfg;
  lin_cfg.kind = SchedulerKind::kVanillaSs;
  lin_cfg.decay = DecayScheme::kLinear;
  lin_cfg.decay_c = 1e-3;
  lin_cfg.eps_min = 0.3;
  CHECK(step_decay_epsilon(lin_cfg, 0) == doctest::Approx(1.0));
  CHECK(step_decay_epsilon(lin_cfg, 1000000) == doctest::Approx(0.3));

  double prev = 1.0;
  for (std::int64_t step = 0; step <= 5000; step += 250) {
    const double eps = step_decay_epsilon(exp_cfg, step);
    CHECK(eps <= prev);
    prev = eps;
  }

  SchedulerConfig bad = exp_cfg;
  bad.decay_k = 1.5;
  CHECK_THROWS_AS(step_decay_epsilon(bad, 1), ConfigError);
}

TEST_CASE("bernoulli mix endpoints and rate") {
  const int t = 100001;  // slot 0 is BOS
  std::vector<std::int32_t> input(static_cast<std::size_t>(t), 7);
  input[0] = Vocabulary::kBos;
  std::vector<std::int32_t> preds(static_cast<std::size_t>(t), 9);

  Rng rng(4);
  CHECK(bernoulli_mix(input, preds, 1.0, t, rng) == input);

  auto all_model = bernoulli_mix(input, preds, 0.0, t, rng);
  CHECK(all_model[0] == Vocabulary::kBos);
  for (int p = 1; p < t; ++p) CHECK(all_model[static_cast<std::size_t>(p)] == 9);

  auto half = bernoulli_mix(input, preds, 0.5, t, rng);
  std::int64_t replaced = 0;
  for (int p = 1; p < t; ++p)
    if (half[static_cast<std::size_t>(p)] == 9) ++replaced;
  CHECK(static_cast<double>(replaced) / (t - 1) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("batch scheduling invariants") {
  // Hand-built 2-sequence batch with padding in the second row.
  ParallelBatch batch;
  batch.batch_size = 2;
  batch.src_len = 0;
  batch.tgt_len = 5;
  batch.target_input = {Vocabulary::kBos, 11, 12, 13, 14,
                        Vocabulary::kBos, 15, 16, Vocabulary::kPad, Vocabulary::kPad};
  batch.target_output = {11, 12, 13, 14, Vocabulary::kEos,
                         15, 16, Vocabulary::kEos, Vocabulary::kPad, Vocabulary::kPad};
  batch.target_mask = {1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  // Predictions that match the first row fully and the second row partially.
  std::vector<std::int32_t> preds = {11, 12, 13, 14, Vocabulary::kEos,
                                     15, 99, Vocabulary::kEos, 0, 0};

  SchedulerConfig cfg;
  cfg.kind = SchedulerKind::kDynamic;
  cfg.beta = 1.0;
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    auto schedule = schedule_batch(batch, preds, cfg, trial, rng);
    REQUIRE(schedule.decisions.size() == 2);
    for (int b = 0; b < 2; ++b) {
      const auto& d = schedule.decisions[static_cast<std::size_t>(b)];
      const int t_eff = batch.effective_target_len(b);
      CHECK(d.replaced <= static_cast<int>(std::lround(cfg.beta * d.accuracy * t_eff)));
      CHECK(d.replaced == static_cast<int>(d.positions.size()));
      for (int pos : d.positions) {
        CHECK(pos >= 1);
        CHECK(pos < t_eff);  // never BOS, never padding slots
      }
    }
    // Padding slots stay PAD bitwise.
    CHECK(schedule.mixed_input[8] == Vocabulary::kPad);
    CHECK(schedule.mixed_input[9] == Vocabulary::kPad);
  }
  CHECK(schedule_batch(batch, preds, cfg, 0, rng).decisions[0].accuracy == 1.0);
  CHECK(schedule_batch(batch, preds, cfg, 0, rng).decisions[1].accuracy ==
        doctest::Approx(2.0 / 3.0));

  SchedulerConfig off = cfg;
  off.beta = 0.0;
  auto schedule = schedule_batch(batch, preds, off, 0, rng);
  CHECK(schedule.mixed_input == batch.target_input);

  SchedulerConfig tf;
  tf.kind = SchedulerKind::kTeacherForcing;
  CHECK(schedule_batch(batch, preds, tf, 0, rng).mixed_input == batch.target_input);
}

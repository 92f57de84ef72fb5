// SPDX-License-Identifier: Apache-2.0
#include "dysi/run_config.hpp"

#include "doctest.h"
#include "dysi/errors.hpp"

using namespace dysi;

TEST_CASE("config parsing accepts known keys and comments") {
  const std::string text = R"(
# cipher run
task.kind=cipher
task.vocab_size=30
task.len_min=4
task.len_max=12
task.n_pairs=5000
task.seed=7

model.d_model=64
model.n_heads=4
model.mode=encoder-decoder

training.objective=dysi
training.alpha=0.5   # headline default
training.beta=0.5
training.label_smoothing=0.1
training.max_steps=3000
training.seed=13

decoding.strategy=beam
decoding.beam_size=5
decoding.length_norm=0.2

output.dir=/tmp/dysi_cfg_run
)";
  const RunConfig config = parse_run_config(text);
  CHECK(config.task_kind == "cipher");
  CHECK(config.task_vocab_size == 30);
  CHECK(config.data_seed == 7);
  CHECK(config.model.d_model == 64);
  CHECK(config.alpha == 0.5);
  CHECK(config.beta == 0.5);
  CHECK(config.seed == 13);
  CHECK(config.decode_strategy == "beam");
  CHECK(config.beam_size == 5);
  CHECK(config.out_dir == "/tmp/dysi_cfg_run");
}

TEST_CASE("unknown keys are hard errors") {
  CHECK_THROWS_WITH_AS(parse_run_config("training.aalpha=0.5\n"),
                       doctest::Contains("unknown key"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("not a key value line\n"), ConfigError);
}

TEST_CASE("value validation") {
  CHECK_THROWS_AS(parse_run_config("training.alpha=minus\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("training.beta=1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("training.objective=gan\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.mode=bidirectional\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("decoding.strategy=magic\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("decoding.top_p=0\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("task.kind=tsv\n"), ConfigError);  // needs train_path
  CHECK_THROWS_AS(parse_run_config("task.kind=lm\n"), ConfigError);   // needs decoder-only
}

TEST_CASE("defaults carry the documented training recipe") {
  const RunConfig config = parse_run_config("");
  CHECK(config.alpha == 0.5);
  CHECK(config.beta == 0.5);
  CHECK(config.label_smoothing == 0.1);
  CHECK(config.lr_peak == doctest::Approx(8e-4));
  CHECK(config.warmup_steps == 4000);
  CHECK(config.beam_size == 5);
  CHECK(config.top_p == doctest::Approx(0.8));
}

TEST_CASE("canonical dump reparses to the same configuration") {
  RunConfig config = parse_run_config("task.kind=lm\nmodel.mode=decoder-only\ntraining.alpha=0.25\n");
  const RunConfig round = parse_run_config(run_config_to_string(config));
  CHECK(run_config_to_string(round) == run_config_to_string(config));
}

TEST_CASE("scheduler and objective blocks map through") {
  RunConfig config =
      parse_run_config("training.objective=vanilla-ss\ntraining.ss_decay=linear\n"
                       "training.ss_eps_min=0.3\ntraining.beta=0.75\n");
  const auto sched = config.scheduler_config();
  CHECK(sched.beta == 0.75);
  CHECK(sched.decay == DecayScheme::kLinear);
  const auto obj = config.training_objective();
  CHECK(obj.objective == Objective::kVanillaSs);
}

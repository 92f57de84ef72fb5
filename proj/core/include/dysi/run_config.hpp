// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat UTF-8 key=value lines with dotted section
// prefixes (task., model., training., decoding., output.). Unknown keys are
// hard errors. '#' starts a comment; blank lines are ignored.

#pragma once

#include <cstdint>
#include <string>

#include "dysi/imitation.hpp"
#include "dysi/model.hpp"
#include "dysi/scheduling.hpp"

namespace dysi {

struct RunConfig {
  // task block
  std::string task_kind = "copy";  // copy | reverse | cipher | lm | tsv
  std::string train_path;          // tsv mode
  std::string valid_path;
  std::string test_path;
  std::string lm_corpus = "builtin";  // lm mode: path or "builtin"
  int lm_context = 160;
  std::string vocab_mode = "char";  // char | whitespace (file-backed tasks)
  int vocab_min_count = 1;
  int n_pairs = 5000;               // synthetic tasks
  int len_min = 4;
  int len_max = 12;
  int task_vocab_size = 30;
  std::uint64_t data_seed = 1;
  double holdout_fraction = 0.05;   // validation/test split of synthetic data

  ModelConfig model;

  // training block
  std::string objective = "dysi";
  double alpha = 0.5;
  double beta = 0.5;
  double label_smoothing = 0.1;
  double lr_peak = 8e-4;
  int warmup_steps = 4000;
  int max_steps = 3000;
  std::int64_t max_tokens = 1024;
  std::uint64_t seed = 1;
  int checkpoint_every = 200;
  std::string init_checkpoint;
  std::string ss_decay = "exponential";
  double ss_k = 0.985;
  double ss_decay_unit = 100.0;
  double ss_c = 1e-4;
  double ss_eps_min = 0.3;
  double target_accuracy = 0.0;     // validation-accuracy goal; 0 disables the probes
  bool stop_at_target = true;       // stop early once reached, or record and continue
  int accuracy_check_every = 100;

  // decoding block
  std::string decode_strategy = "greedy";  // greedy | beam | nucleus
  int beam_size = 5;
  double length_norm = 0.2;
  double top_p = 0.8;
  int decode_max_len = 64;

  std::string out_dir = "runs/default";

  void validate() const;
  SchedulerConfig scheduler_config() const;
  TrainingObjective training_objective() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_string(const RunConfig& config);

}  // namespace dysi

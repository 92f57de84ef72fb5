// SPDX-License-Identifier: Apache-2.0
//
// Command layer shared by the CLI and the test suites: task construction,
// the training loop (logging, checkpoints, validation, early stop, resume,
// hot start), evaluation, generation, and the perturbation suite.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dysi/checkpoint.hpp"
#include "dysi/data.hpp"
#include "dysi/imitation.hpp"
#include "dysi/metrics.hpp"
#include "dysi/model.hpp"
#include "dysi/robustness.hpp"
#include "dysi/run_config.hpp"

namespace dysi {

// Everything a run needs from the task block: vocabulary and splits.
struct TaskData {
  Vocabulary vocab{Vocabulary::synthetic(8)};
  bool is_lm = false;
  std::vector<SequencePair> train_pairs;
  std::vector<SequencePair> valid_pairs;
  std::vector<SequencePair> test_pairs;
  LmCorpus lm_train;
  LmCorpus lm_valid;
};

TaskData build_task(const RunConfig& config);

// Deterministic batch source over a task: sequence-to-sequence tasks cycle
// reshuffled epochs, LM tasks sample windows per step. Batch k is a pure
// function of (task, max_tokens, seed, k), so resumed runs replay exactly.
class BatchStream {
 public:
  BatchStream(const TaskData& task, std::int64_t max_tokens, std::uint64_t seed);
  ParallelBatch batch_for_step(std::int64_t step);  // 1-based

 private:
  const TaskData& task_;
  std::int64_t max_tokens_;
  std::uint64_t seed_;
  std::int64_t epoch_ = -1;
  std::int64_t epoch_start_step_ = 0;  // first step index served by this epoch
  std::vector<ParallelBatch> epoch_batches_;

  void load_epoch(std::int64_t epoch, std::int64_t start_step);
};

// Teacher-forced validation statistics.
struct EvalStats {
  double loss = 0.0;
  double token_accuracy = 0.0;
  std::int64_t token_count = 0;
};

EvalStats validate_model(const Transformer& model, const TaskData& task, const RunConfig& config);

struct TrainOutcome {
  std::int64_t steps_run = 0;
  std::string final_checkpoint;
  std::string best_checkpoint;
  double best_validation_loss = 0.0;
  double last_validation_accuracy = 0.0;
  bool reached_target_accuracy = false;
  std::int64_t target_reached_at_step = 0;
};

// Runs (or resumes) training in config.out_dir; holds the directory lock
// for the duration. Hot start behavior activates when
// config.init_checkpoint is set: parameters load from the checkpoint while
// optimizer state, step counter, and LR schedule start fresh.
TrainOutcome cmd_train(const RunConfig& config, bool resume = false);

// Explicit hot-start entry point: same as cmd_train with the given
// initialization checkpoint.
TrainOutcome cmd_hot_start(RunConfig config, const std::string& init_checkpoint);

void cmd_average_checkpoints(const std::vector<std::string>& inputs, const std::string& output);

struct EvaluationReport {
  double bleu = 0.0;
  std::array<double, 4> precisions{};
  double brevity_penalty = 1.0;
  double oracle_bleu = 0.0;
  double entropy = 0.0;
  double repetition_1 = 0.0;
  double repetition_2 = 0.0;
  double repetition_3 = 0.0;
  double token_accuracy = 0.0;
  double sequence_accuracy = 0.0;
  std::int64_t sentence_count = 0;

  std::string to_json() const;
};

// Decodes the configured test set (or explicit source/reference files) with
// the configured strategy and scores it.
EvaluationReport cmd_evaluate(const RunConfig& config, const std::string& checkpoint_path,
                              const std::string& source_file = "",
                              const std::vector<std::string>& reference_files = {});

// One continuation per prompt line; deterministic under greedy/beam,
// seed-reproducible under nucleus.
std::vector<std::string> cmd_generate(const RunConfig& config, const std::string& checkpoint_path,
                                      const std::vector<std::string>& prompt_lines);

struct PerturbReport {
  SuiteResult suite;
  std::string records_jsonl;
  std::string summary_csv;
};

PerturbReport cmd_perturb(const RunConfig& config, const std::vector<std::string>& checkpoint_paths,
                          const std::vector<std::string>& paragraph_lines,
                          const std::vector<std::string>& perturbation_labels,
                          int words_per_prompt, int threads,
                          const RecordSink& sink = nullptr);

// Builds the model for a task and restores a checkpoint into it, enforcing
// the config digest.
Transformer load_model_for_task(const RunConfig& config, const TaskData& task,
                                const std::string& checkpoint_path, Checkpoint* out_checkpoint);

// Exclusive ownership of an output directory via a lock file.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::string& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::string path_;
};

int env_thread_cap();  // DYSI_THREADS, default 1

}  // namespace dysi

// SPDX-License-Identifier: Apache-2.0
//
// dysi: train and study small autoregressive text models under
// teacher-forcing, scheduled-sampling, and imitation-based objectives.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dysi/data.hpp"
#include "dysi/errors.hpp"
#include "dysi/run_config.hpp"
#include "dysi/train_loop.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  bool quiet = false;
};

void add_common(CLI::App* cmd, GlobalArgs& args, bool config_required = true) {
  auto* config = cmd->add_option("--config", args.config_path, "run configuration file");
  if (config_required) config->required();
  cmd->add_option("--seed", args.seed, "override training.seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out-dir", args.out_dir, "override output.dir");
  cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

dysi::RunConfig resolve_config(const GlobalArgs& args) {
  dysi::RunConfig config = dysi::load_run_config(args.config_path);
  if (args.seed_set) config.seed = args.seed;
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  config.validate();
  return config;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::istringstream in(dysi::read_text_file(path));
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void print_outcome(const dysi::TrainOutcome& outcome, bool quiet) {
  if (quiet) return;
  std::cout << "steps_run=" << outcome.steps_run
            << " final_checkpoint=" << outcome.final_checkpoint
            << " best_checkpoint=" << outcome.best_checkpoint;
  if (outcome.reached_target_accuracy)
    std::cout << " target_accuracy_reached_at=" << outcome.target_reached_at_step;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale training laboratory for autoregressive text generation"};
  app.require_subcommand(1);

  GlobalArgs train_args;
  bool resume = false;
  auto* train = app.add_subcommand("train", "train with the configured objective");
  add_common(train, train_args);
  train->add_flag("--resume", resume, "continue from the latest checkpoint in the output dir");

  GlobalArgs hot_args;
  std::string hot_init;
  auto* hot = app.add_subcommand("hot-start",
                                 "load parameters from a checkpoint, reset the optimizer and "
                                 "schedule, then train");
  add_common(hot, hot_args);
  hot->add_option("--init", hot_init, "initialization checkpoint")->required();

  std::vector<std::string> average_inputs;
  std::string average_output;
  auto* average = app.add_subcommand("average-checkpoints",
                                     "element-wise mean of parameter tensors");
  average->add_option("--output", average_output, "output checkpoint path")->required();
  average->add_option("checkpoints", average_inputs, "input checkpoints")->required();

  GlobalArgs eval_args;
  std::string eval_checkpoint, eval_source, eval_out;
  std::vector<std::string> eval_references;
  auto* evaluate = app.add_subcommand("evaluate", "decode a test set and score it");
  add_common(evaluate, eval_args);
  evaluate->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
  evaluate->add_option("--source", eval_source, "source sentences, one per line");
  evaluate->add_option("--reference", eval_references,
                       "reference file(s); repeat for multiple references");
  evaluate->add_option("--out", eval_out, "also write the JSON report here");

  GlobalArgs gen_args;
  std::string gen_checkpoint, gen_prompts, gen_output;
  auto* generate = app.add_subcommand("generate", "one continuation per prompt line");
  add_common(generate, gen_args);
  generate->add_option("--checkpoint", gen_checkpoint, "model checkpoint")->required();
  generate->add_option("--prompts", gen_prompts, "prompt file, one prompt per line")->required();
  generate->add_option("--output", gen_output, "continuations file ('-' for stdout)")->required();

  GlobalArgs perturb_args;
  std::vector<std::string> perturb_checkpoints;
  std::string perturb_prompts;
  std::vector<std::string> perturb_labels = {
      "last-word-3", "last-word-5", "last-word-7", "last-word-10",
      "ngram-3",     "ngram-5",     "ngram-7",     "ngram-10",
      "replace-5",   "replace-10",  "replace-20"};
  int words_per_prompt = 50;
  auto* perturb = app.add_subcommand("perturb", "prompt-perturbation robustness suite");
  add_common(perturb, perturb_args);
  perturb->add_option("--prompts", perturb_prompts, "paragraph file, one per line")->required();
  perturb->add_option("--perturbations", perturb_labels,
                      "perturbation labels (kind-parameter)");
  perturb->add_option("--words-per-prompt", words_per_prompt, "prompt length in words");
  perturb->add_option("checkpoints", perturb_checkpoints, "model checkpoints to compare")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      print_outcome(dysi::cmd_train(resolve_config(train_args), resume), train_args.quiet);
    } else if (*hot) {
      print_outcome(dysi::cmd_hot_start(resolve_config(hot_args), hot_init), hot_args.quiet);
    } else if (*average) {
      dysi::cmd_average_checkpoints(average_inputs, average_output);
    } else if (*evaluate) {
      const auto report = dysi::cmd_evaluate(resolve_config(eval_args), eval_checkpoint,
                                             eval_source, eval_references);
      const std::string json = report.to_json();
      if (!eval_out.empty()) dysi::write_text_file(eval_out, json + "\n");
      if (!eval_args.quiet || eval_out.empty()) std::cout << json << '\n';
    } else if (*generate) {
      const auto continuations =
          dysi::cmd_generate(resolve_config(gen_args), gen_checkpoint, read_lines(gen_prompts));
      std::string joined;
      for (const auto& line : continuations) {
        joined += line;
        joined += '\n';
      }
      if (gen_output == "-")
        std::cout << joined;
      else
        dysi::write_text_file(gen_output, joined);
    } else if (*perturb) {
      dysi::RunConfig config = resolve_config(perturb_args);
      const auto report = dysi::cmd_perturb(config, perturb_checkpoints,
                                            read_lines(perturb_prompts), perturb_labels,
                                            words_per_prompt, dysi::env_thread_cap());
      dysi::write_text_file(config.out_dir + "/perturb_records.jsonl", report.records_jsonl);
      dysi::write_text_file(config.out_dir + "/perturb_summary.csv", report.summary_csv);
      if (!perturb_args.quiet) std::cout << report.summary_csv;
    }
  } catch (const dysi::Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal_error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

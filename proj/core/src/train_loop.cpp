// SPDX-License-Identifier: Apache-2.0
#include "dysi/train_loop.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dysi/decoding.hpp"
#include "dysi/errors.hpp"

namespace fs = std::filesystem;

namespace dysi {

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void three_way_split(std::vector<SequencePair> pairs, double holdout, TaskData& task) {
  const std::size_t n = pairs.size();
  const std::size_t h = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                     static_cast<double>(n) * holdout));
  if (n < 2 * h + 1) throw InputError("task: too few pairs for a train/valid/test split");
  task.test_pairs.assign(pairs.end() - static_cast<std::ptrdiff_t>(h), pairs.end());
  task.valid_pairs.assign(pairs.end() - static_cast<std::ptrdiff_t>(2 * h),
                          pairs.end() - static_cast<std::ptrdiff_t>(h));
  pairs.resize(n - 2 * h);
  task.train_pairs = std::move(pairs);
}

}  // namespace

TaskData build_task(const RunConfig& config) {
  config.validate();
  TaskData task;
  if (config.task_kind == "copy" || config.task_kind == "reverse" || config.task_kind == "cipher") {
    task.vocab = Vocabulary::synthetic(config.task_vocab_size);
    std::vector<SequencePair> pairs;
    if (config.task_kind == "copy")
      pairs = gen_copy_task(config.n_pairs, config.len_min, config.len_max,
                            config.task_vocab_size, config.data_seed);
    else if (config.task_kind == "reverse")
      pairs = gen_reverse_task(config.n_pairs, config.len_min, config.len_max,
                               config.task_vocab_size, config.data_seed);
    else
      pairs = gen_cipher_task(config.n_pairs, config.len_min, config.len_max,
                              config.task_vocab_size, config.data_seed);
    three_way_split(std::move(pairs), config.holdout_fraction, task);
  } else if (config.task_kind == "tsv") {
    const auto train_text = load_parallel_tsv(config.train_path);
    std::vector<std::string> lines;
    for (const auto& [src, tgt] : train_text) {
      lines.push_back(src);
      lines.push_back(tgt);
    }
    task.vocab = Vocabulary::build(
        lines, config.vocab_mode == "char" ? TokenMode::kChar : TokenMode::kWhitespace,
        config.vocab_min_count);
    if (!config.valid_path.empty() && !config.test_path.empty()) {
      task.train_pairs = encode_pairs(train_text, task.vocab);
      task.valid_pairs = encode_pairs(load_parallel_tsv(config.valid_path), task.vocab);
      task.test_pairs = encode_pairs(load_parallel_tsv(config.test_path), task.vocab);
    } else {
      three_way_split(encode_pairs(train_text, task.vocab), config.holdout_fraction, task);
    }
  } else {  // lm
    task.is_lm = true;
    const std::string text = config.lm_corpus == "builtin"
                                 ? builtin_corpus_text(config.data_seed, 1000000)
                                 : read_text_file(config.lm_corpus);
    auto lines = split_lines(text);
    if (lines.empty()) throw InputError("lm task: corpus is empty");
    const std::size_t n_valid =
        std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(lines.size()) *
                                                          config.holdout_fraction));
    if (lines.size() <= n_valid) throw InputError("lm task: corpus too small for a split");
    std::string train_text, valid_text;
    for (std::size_t i = 0; i + n_valid < lines.size(); ++i) {
      train_text += lines[i];
      train_text += '\n';
    }
    for (std::size_t i = lines.size() - n_valid; i < lines.size(); ++i) {
      valid_text += lines[i];
      valid_text += '\n';
    }
    task.vocab = Vocabulary::build(
        {train_text}, config.vocab_mode == "char" ? TokenMode::kChar : TokenMode::kWhitespace,
        config.vocab_min_count);
    task.lm_train = gen_char_lm_corpus(train_text, task.vocab, config.lm_context);
    task.lm_valid = gen_char_lm_corpus(valid_text, task.vocab, config.lm_context);
    if (task.lm_train.window_count() == 0)
      throw InputError("lm task: training text shorter than one context window");
    if (config.model.max_positions < config.lm_context)
      throw ConfigError("model.max_positions must cover task.lm_context");
  }
  return task;
}

// ---------------------------------------------------------------------------
// BatchStream
// ---------------------------------------------------------------------------

BatchStream::BatchStream(const TaskData& task, std::int64_t max_tokens, std::uint64_t seed)
    : task_(task), max_tokens_(max_tokens), seed_(seed) {}

void BatchStream::load_epoch(std::int64_t epoch, std::int64_t start_step) {
  epoch_ = epoch;
  epoch_start_step_ = start_step;
  epoch_batches_ =
      make_batches(task_.train_pairs, max_tokens_, Rng::mix(seed_, static_cast<std::uint64_t>(epoch)));
  if (epoch_batches_.empty()) throw InputError("training set produced no batches");
}

ParallelBatch BatchStream::batch_for_step(std::int64_t step) {
  if (task_.is_lm) {
    Rng rng(seed_, Rng::mix(rng_stream::kDataOrder, static_cast<std::uint64_t>(step)));
    return task_.lm_train.sample_batch(max_tokens_, rng);
  }
  if (epoch_ < 0 || step < epoch_start_step_) load_epoch(0, 1);
  while (step >= epoch_start_step_ + static_cast<std::int64_t>(epoch_batches_.size()))
    load_epoch(epoch_ + 1, epoch_start_step_ + static_cast<std::int64_t>(epoch_batches_.size()));
  return epoch_batches_[static_cast<std::size_t>(step - epoch_start_step_)];
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

EvalStats validate_model(const Transformer& model, const TaskData& task, const RunConfig& config) {
  NoGradGuard guard;
  std::vector<ParallelBatch> batches;
  if (task.is_lm) {
    const std::int64_t windows = task.lm_valid.window_count();
    if (windows == 0) throw InputError("validation: LM corpus has no windows");
    const std::int64_t rows = std::max<std::int64_t>(1, config.max_tokens / config.lm_context);
    const std::int64_t want = std::min<std::int64_t>(windows, rows * 8);
    std::vector<std::int64_t> picks;
    const std::int64_t stride = std::max<std::int64_t>(1, windows / want);
    for (std::int64_t w = 0; w < windows && static_cast<std::int64_t>(picks.size()) < want;
         w += stride)
      picks.push_back(w);
    for (std::size_t i = 0; i < picks.size(); i += static_cast<std::size_t>(rows)) {
      std::vector<std::int64_t> chunk(picks.begin() + static_cast<std::ptrdiff_t>(i),
                                      picks.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                          picks.size(), i + static_cast<std::size_t>(rows))));
      batches.push_back(task.lm_valid.batch(chunk));
    }
  } else {
    batches = make_batches(task.valid_pairs, config.max_tokens, 0);
  }
  double loss_weighted = 0.0;
  std::int64_t tokens = 0, correct = 0;
  for (const auto& batch : batches) {
    auto dists = model.forward_teacher_forced(batch);
    const int rows = dists.batch * dists.steps;
    std::vector<std::int32_t> targets(batch.target_output.begin(), batch.target_output.end());
    auto loss = label_smoothed_nll_mean(reshape(dists.log_probs, {rows, dists.vocab}), targets,
                                        batch.target_mask, config.label_smoothing);
    const auto preds = greedy_predictions(dists);
    std::int64_t batch_tokens = 0;
    for (int r = 0; r < rows; ++r) {
      if (batch.target_mask[static_cast<std::size_t>(r)] == 0.0f) continue;
      ++batch_tokens;
      if (preds[static_cast<std::size_t>(r)] == targets[static_cast<std::size_t>(r)]) ++correct;
    }
    loss_weighted += loss.item_f64() * static_cast<double>(batch_tokens);
    tokens += batch_tokens;
  }
  if (tokens == 0) throw InputError("validation: no tokens");
  EvalStats stats;
  stats.loss = loss_weighted / static_cast<double>(tokens);
  stats.token_accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
  stats.token_count = tokens;
  return stats;
}

// ---------------------------------------------------------------------------
// Directory lock
// ---------------------------------------------------------------------------

DirectoryLock::DirectoryLock(const std::string& dir) : path_(dir + "/.lock") {
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw StateError("output directory is locked by another process: " + path_);
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() { ::unlink(path_.c_str()); }

int env_thread_cap() {
  const char* value = std::getenv("DYSI_THREADS");
  if (!value || !*value) return 1;
  try {
    return std::max(1, std::stoi(value));
  } catch (const std::exception&) {
    throw ConfigError(std::string("DYSI_THREADS: not an integer: ") + value);
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06lld.dysi", static_cast<long long>(step));
  return buf;
}

std::string metrics_line(std::int64_t step, const TrainStepStats& stats, double lr) {
  nlohmann::json j{{"step", step},
                   {"loss_total", stats.loss.total},
                   {"loss_mle", stats.loss.mle},
                   {"loss_il", stats.loss.imitation},
                   {"acc", stats.accuracy},
                   {"mean_N", stats.mean_replaced},
                   {"epsilon", stats.epsilon},
                   {"lr", lr}};
  return j.dump();
}

// Keep only rows with step <= last_step (resume truncation).
void truncate_log(const std::string& path, std::int64_t last_step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) continue;
    if (j["step"].get<std::int64_t>() > last_step) continue;
    kept += line;
    kept += '\n';
  }
  in.close();
  write_text_file(path, kept);
}

std::int64_t latest_checkpoint_step(const std::string& dir) {
  std::int64_t best = -1;
  if (!fs::exists(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0 || name.size() < 11) continue;
    try {
      best = std::max(best, static_cast<std::int64_t>(std::stoll(name.substr(5, 6))));
    } catch (const std::exception&) {
    }
  }
  return best;
}

void refresh_symlink(const std::string& dir, const std::string& link_name,
                     const std::string& target_name) {
  const fs::path link = fs::path(dir) / link_name;
  std::error_code ec;
  fs::remove(link, ec);
  fs::create_symlink(target_name, link, ec);
  if (ec) {
    // Filesystems without symlink support fall back to a plain copy.
    fs::copy_file(fs::path(dir) / target_name, link, fs::copy_options::overwrite_existing);
  }
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config, bool resume) {
  config.validate();
  TaskData task = build_task(config);
  ModelConfig model_config = config.model;
  model_config.vocab_size = task.vocab.size();
  fs::create_directories(config.out_dir);
  DirectoryLock lock(config.out_dir);

  Rng init_rng(config.seed, rng_stream::kInit);
  Transformer model(model_config, init_rng);
  OptimizerState optimizer;
  optimizer.init(model.params());
  const std::uint64_t digest = config_digest(model_config, task.vocab);

  std::int64_t start_step = 0;
  if (resume) {
    const std::int64_t last = latest_checkpoint_step(config.out_dir);
    if (last < 0) throw StateError("resume: no checkpoints in " + config.out_dir);
    const auto checkpoint =
        load_checkpoint(config.out_dir + "/" + checkpoint_name(last));
    if (checkpoint.config_digest != digest)
      throw StateError("resume: checkpoint was trained with a different model or vocabulary");
    restore(checkpoint, model, &optimizer);
    start_step = static_cast<std::int64_t>(checkpoint.step);
    truncate_log(config.out_dir + "/metrics.jsonl", start_step);
    truncate_log(config.out_dir + "/val.jsonl", start_step);
  } else if (!config.init_checkpoint.empty()) {
    // Hot start: parameters from the checkpoint, fresh optimizer state,
    // step counter, and LR schedule.
    const auto checkpoint = load_checkpoint(config.init_checkpoint);
    if (checkpoint.config_digest != digest)
      throw StateError("hot start: checkpoint was trained with a different model or vocabulary");
    restore(checkpoint, model, nullptr);
  }

  std::ofstream metrics(config.out_dir + "/metrics.jsonl",
                        resume ? std::ios::app : std::ios::trunc);
  std::ofstream val_log(config.out_dir + "/val.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics || !val_log) throw IoError("cannot open log files in " + config.out_dir);

  BatchStream batches(task, config.max_tokens, config.seed);
  const TrainingObjective objective = config.training_objective();

  TrainOutcome outcome;
  outcome.best_validation_loss = 1e300;
  std::int64_t last_saved_step = start_step;
  std::string best_name;

  auto save_at = [&](std::int64_t step) {
    const std::string name = checkpoint_name(step);
    save_checkpoint(snapshot(model, &optimizer, static_cast<std::uint64_t>(step), digest),
                    config.out_dir + "/" + name);
    last_saved_step = step;
    return name;
  };
  auto run_validation = [&](std::int64_t step, const std::string& ckpt_name) {
    const EvalStats stats = validate_model(model, task, config);
    nlohmann::json j{
        {"step", step}, {"val_loss", stats.loss}, {"val_accuracy", stats.token_accuracy}};
    val_log << j.dump() << '\n' << std::flush;
    outcome.last_validation_accuracy = stats.token_accuracy;
    if (!ckpt_name.empty() && stats.loss < outcome.best_validation_loss) {
      outcome.best_validation_loss = stats.loss;
      best_name = ckpt_name;
      refresh_symlink(config.out_dir, "best.dysi", best_name);
    }
    return stats;
  };

  std::int64_t step = start_step;
  for (step = start_step + 1; step <= config.max_steps; ++step) {
    const double lr = lr_inverse_sqrt(step, config.warmup_steps, config.lr_peak);
    const ParallelBatch batch = batches.batch_for_step(step);
    const TrainStepStats stats = train_step(model, batch, objective, step, optimizer, lr,
                                            config.seed);
    metrics << metrics_line(step, stats, lr) << '\n' << std::flush;

    const bool cadence = step % config.checkpoint_every == 0;
    const bool accuracy_probe = config.target_accuracy > 0.0 &&
                                step % config.accuracy_check_every == 0;
    if (cadence || accuracy_probe) {
      const std::string name = cadence ? save_at(step) : "";
      const EvalStats val = run_validation(step, name);
      if (config.target_accuracy > 0.0 && !outcome.reached_target_accuracy &&
          val.token_accuracy >= config.target_accuracy) {
        outcome.reached_target_accuracy = true;
        outcome.target_reached_at_step = step;
        if (config.stop_at_target) break;
      }
    }
  }
  const std::int64_t final_step = std::min<std::int64_t>(step, config.max_steps);
  outcome.steps_run = final_step - start_step;
  if (last_saved_step != final_step ||
      !fs::exists(config.out_dir + "/" + checkpoint_name(final_step))) {
    const std::string name = save_at(final_step);
    run_validation(final_step, name);
  }
  const std::string final_name = checkpoint_name(final_step);
  refresh_symlink(config.out_dir, "final.dysi", final_name);
  if (best_name.empty()) refresh_symlink(config.out_dir, "best.dysi", final_name);
  outcome.final_checkpoint = config.out_dir + "/" + final_name;
  outcome.best_checkpoint = config.out_dir + "/best.dysi";
  return outcome;
}

TrainOutcome cmd_hot_start(RunConfig config, const std::string& init_checkpoint) {
  config.init_checkpoint = init_checkpoint;
  return cmd_train(config, false);
}

void cmd_average_checkpoints(const std::vector<std::string>& inputs, const std::string& output) {
  if (inputs.empty()) throw InputError("average-checkpoints: no input checkpoints");
  std::vector<Checkpoint> checkpoints;
  checkpoints.reserve(inputs.size());
  for (const auto& path : inputs) checkpoints.push_back(load_checkpoint(path));
  save_checkpoint(average_checkpoints(checkpoints), output);
}

// ---------------------------------------------------------------------------
// Evaluation / generation / perturbation
// ---------------------------------------------------------------------------

Transformer load_model_for_task(const RunConfig& config, const TaskData& task,
                                const std::string& checkpoint_path, Checkpoint* out_checkpoint) {
  ModelConfig model_config = config.model;
  model_config.vocab_size = task.vocab.size();
  Rng init_rng(config.seed, rng_stream::kInit);
  Transformer model(model_config, init_rng);
  Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  if (checkpoint.config_digest != config_digest(model_config, task.vocab))
    throw StateError("checkpoint " + checkpoint_path +
                     " was trained with a different model or vocabulary");
  restore(checkpoint, model, nullptr);
  if (out_checkpoint) *out_checkpoint = std::move(checkpoint);
  return model;
}

namespace {

std::vector<std::int32_t> decode_one(const Transformer& model, const RunConfig& config,
                                     const std::vector<std::int32_t>* source_ids,
                                     const std::vector<std::int32_t>& prompt_ids,
                                     std::uint64_t sample_stream,
                                     std::vector<double>* entropies) {
  std::optional<EncodedSource> encoded;
  if (model.config().mode == ModelConfig::Mode::kEncoderDecoder) {
    std::vector<std::int32_t> with_eos = *source_ids;
    with_eos.push_back(Vocabulary::kEos);
    encoded = model.encode_single(with_eos);
  }
  TransformerScorer scorer(model, std::move(encoded));
  if (entropies) {
    // Entropy is always measured over greedy decoding distributions so runs
    // with different strategies stay comparable.
    std::vector<std::int32_t> prefix = prompt_ids;
    std::vector<double> local;
    for (int stepped = 0; stepped < config.decode_max_len; ++stepped) {
      const auto row = scorer.next_log_probs(prefix);
      local.push_back(row_entropy_from_log_probs(row));
      int best = 0;
      for (int w = 1; w < static_cast<int>(row.size()); ++w)
        if (row[static_cast<std::size_t>(w)] > row[static_cast<std::size_t>(best)]) best = w;
      if (best == Vocabulary::kEos) break;
      prefix.push_back(best);
    }
    entropies->insert(entropies->end(), local.begin(), local.end());
  }
  if (config.decode_strategy == "greedy") {
    if (prompt_ids.empty()) return greedy_decode(scorer, config.decode_max_len);
    std::vector<std::int32_t> prefix = prompt_ids;
    std::vector<std::int32_t> out;
    for (int stepped = 0; stepped < config.decode_max_len; ++stepped) {
      const auto row = scorer.next_log_probs(prefix);
      int best = 0;
      for (int w = 1; w < static_cast<int>(row.size()); ++w)
        if (row[static_cast<std::size_t>(w)] > row[static_cast<std::size_t>(best)]) best = w;
      if (best == Vocabulary::kEos) break;
      out.push_back(best);
      prefix.push_back(best);
    }
    return out;
  }
  if (config.decode_strategy == "beam") {
    if (!prompt_ids.empty())
      throw ConfigError("beam decoding is only supported without a prompt prefix");
    return beam_decode(scorer, config.beam_size, config.length_norm, config.decode_max_len);
  }
  Rng rng(config.seed, sample_stream);
  return nucleus_sample(scorer, prompt_ids, config.top_p, config.decode_max_len, rng);
}

TokenSeq ids_to_tokens(const std::vector<std::int32_t>& ids, const Vocabulary& vocab) {
  TokenSeq out;
  out.reserve(ids.size());
  for (const auto id : ids) out.push_back(vocab.token_of(id));
  return out;
}

}  // namespace

std::string EvaluationReport::to_json() const {
  nlohmann::json j{{"bleu", bleu},
                   {"precisions", precisions},
                   {"brevity_penalty", brevity_penalty},
                   {"oracle_bleu", oracle_bleu},
                   {"entropy", entropy},
                   {"repetition_1", repetition_1},
                   {"repetition_2", repetition_2},
                   {"repetition_3", repetition_3},
                   {"token_accuracy", token_accuracy},
                   {"sequence_accuracy", sequence_accuracy},
                   {"sentence_count", sentence_count}};
  return j.dump(2);
}

EvaluationReport cmd_evaluate(const RunConfig& config, const std::string& checkpoint_path,
                              const std::string& source_file,
                              const std::vector<std::string>& reference_files) {
  TaskData task = build_task(config);
  Transformer model = load_model_for_task(config, task, checkpoint_path, nullptr);

  // Assemble (source or prompt, reference set) items.
  struct Item {
    std::vector<std::int32_t> source;   // encoder input (no EOS yet)
    std::vector<std::int32_t> prompt;   // decoder-only prefix
    std::vector<std::vector<std::int32_t>> refs;
  };
  std::vector<Item> items;
  if (!source_file.empty()) {
    if (reference_files.empty())
      throw ConfigError("evaluate: reference files are required with an explicit source file");
    const auto sources = split_lines(read_text_file(source_file));
    std::vector<std::vector<std::string>> ref_lines;
    for (const auto& path : reference_files) {
      ref_lines.push_back(split_lines(read_text_file(path)));
      if (ref_lines.back().size() != sources.size())
        throw InputError("evaluate: reference file " + path + " is not aligned with the source");
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
      Item item;
      item.source = task.vocab.encode(sources[i]);
      for (const auto& lines : ref_lines) item.refs.push_back(task.vocab.encode(lines[i]));
      items.push_back(std::move(item));
    }
  } else if (!task.is_lm) {
    for (const auto& pair : task.test_pairs) {
      Item item;
      item.source = pair.source;
      item.refs.push_back(pair.target);
      items.push_back(std::move(item));
    }
  } else {
    // Held-out LM windows: the first half of the window prompts the model,
    // the second half is the reference continuation.
    const std::int64_t windows = task.lm_valid.window_count();
    const std::int64_t want = std::min<std::int64_t>(windows, 64);
    const std::int64_t stride = std::max<std::int64_t>(1, windows / std::max<std::int64_t>(want, 1));
    for (std::int64_t w = 0; w < windows && static_cast<std::int64_t>(items.size()) < want;
         w += stride) {
      const auto window = task.lm_valid.window(w);
      const std::size_t half = window.size() / 2;
      Item item;
      item.prompt.assign(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(half));
      item.refs.emplace_back(window.begin() + static_cast<std::ptrdiff_t>(half), window.end());
      items.push_back(std::move(item));
    }
  }
  if (items.empty()) throw InputError("evaluate: nothing to score");

  EvaluationReport report;
  std::vector<TokenSeq> hyps;
  std::vector<std::vector<TokenSeq>> refs;
  std::vector<double> entropies;
  std::int64_t exact = 0;
  double rep1 = 0.0, rep2 = 0.0, rep3 = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const auto hyp_ids =
        decode_one(model, config, &item.source, item.prompt,
                   Rng::mix(rng_stream::kSampling, i), &entropies);
    hyps.push_back(ids_to_tokens(hyp_ids, task.vocab));
    refs.emplace_back();
    for (const auto& r : item.refs) refs.back().push_back(ids_to_tokens(r, task.vocab));
    if (!item.refs.empty() && hyp_ids == item.refs.front()) ++exact;
    rep1 += ngram_repetition_ratio(hyps.back(), 1);
    rep2 += ngram_repetition_ratio(hyps.back(), 2);
    rep3 += ngram_repetition_ratio(hyps.back(), 3);
  }
  const auto bleu_report = corpus_bleu(hyps, refs);
  report.bleu = bleu_report.bleu;
  report.precisions = bleu_report.precisions;
  report.brevity_penalty = bleu_report.brevity_penalty;
  report.oracle_bleu = oracle_sentence_bleu(hyps, refs);
  report.entropy = generation_entropy(entropies);
  report.sentence_count = static_cast<std::int64_t>(items.size());
  report.repetition_1 = rep1 / static_cast<double>(items.size());
  report.repetition_2 = rep2 / static_cast<double>(items.size());
  report.repetition_3 = rep3 / static_cast<double>(items.size());
  report.sequence_accuracy = static_cast<double>(exact) / static_cast<double>(items.size());

  // Teacher-forced token accuracy over the same items.
  {
    NoGradGuard guard;
    std::int64_t tokens = 0, correct = 0;
    for (const auto& item : items) {
      SequencePair pair;
      pair.source = item.source;
      pair.target = item.refs.front();
      if (task.is_lm && !item.prompt.empty()) {
        pair.target = item.prompt;
        pair.target.insert(pair.target.end(), item.refs.front().begin(), item.refs.front().end());
      }
      std::vector<const SequencePair*> one{&pair};
      const auto batch = batch_from_pairs(one);
      const auto dists = model.forward_teacher_forced(batch);
      const auto preds = greedy_predictions(dists);
      for (int r = 0; r < batch.tgt_len; ++r) {
        if (batch.target_mask[static_cast<std::size_t>(r)] == 0.0f) continue;
        ++tokens;
        if (preds[static_cast<std::size_t>(r)] ==
            batch.target_output[static_cast<std::size_t>(r)])
          ++correct;
      }
    }
    report.token_accuracy = tokens > 0 ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  }
  return report;
}

std::vector<std::string> cmd_generate(const RunConfig& config, const std::string& checkpoint_path,
                                      const std::vector<std::string>& prompt_lines) {
  TaskData task = build_task(config);
  Transformer model = load_model_for_task(config, task, checkpoint_path, nullptr);
  std::vector<std::string> out;
  out.reserve(prompt_lines.size());
  for (std::size_t i = 0; i < prompt_lines.size(); ++i) {
    const auto ids = task.vocab.encode(prompt_lines[i]);
    std::vector<std::int32_t> generated;
    if (model.config().mode == ModelConfig::Mode::kEncoderDecoder) {
      generated =
          decode_one(model, config, &ids, {}, Rng::mix(rng_stream::kSampling, i), nullptr);
    } else {
      generated =
          decode_one(model, config, nullptr, ids, Rng::mix(rng_stream::kSampling, i), nullptr);
    }
    out.push_back(task.vocab.decode(generated));
  }
  return out;
}

PerturbReport cmd_perturb(const RunConfig& config, const std::vector<std::string>& checkpoint_paths,
                          const std::vector<std::string>& paragraph_lines,
                          const std::vector<std::string>& perturbation_labels,
                          int words_per_prompt, int threads, const RecordSink& sink) {
  if (checkpoint_paths.empty()) throw InputError("perturb: no checkpoints given");
  TaskData task = build_task(config);
  if (!task.is_lm) throw ConfigError("perturb: requires an lm task");

  std::vector<Transformer> models;
  models.reserve(checkpoint_paths.size());
  for (const auto& path : checkpoint_paths)
    models.push_back(load_model_for_task(config, task, path, nullptr));
  std::vector<TransformerScorer> scorers;
  scorers.reserve(models.size());
  for (const auto& model : models) scorers.emplace_back(model, std::nullopt);

  std::vector<CompletionModel> suite_models;
  for (std::size_t i = 0; i < scorers.size(); ++i) {
    const fs::path p(checkpoint_paths[i]);
    std::string name = p.stem().string();
    // Parent directory disambiguates identically named checkpoints.
    if (p.has_parent_path()) name = p.parent_path().filename().string() + "/" + name;
    suite_models.push_back({name, &scorers[i]});
  }

  std::vector<PerturbationSpec> specs;
  for (std::size_t i = 0; i < perturbation_labels.size(); ++i) {
    auto spec = PerturbationSpec::parse(perturbation_labels[i]);
    spec.seed = Rng::mix(config.seed, i);
    specs.push_back(spec);
  }

  SuiteConfig suite_config;
  suite_config.top_p = config.top_p;
  suite_config.budget = config.decode_max_len;
  suite_config.seed = config.seed;
  suite_config.threads = threads;

  const auto prompts = extract_prompts(paragraph_lines, words_per_prompt);
  PerturbReport report;
  report.suite = run_completion_suite(suite_models, prompts, specs, task.vocab, suite_config, sink);
  report.records_jsonl = suite_records_jsonl(report.suite.records);
  std::vector<std::string> names;
  for (const auto& m : suite_models) names.push_back(m.name);
  report.summary_csv = suite_summary_csv(report.suite.summary, names);
  return report;
}

}  // namespace dysi

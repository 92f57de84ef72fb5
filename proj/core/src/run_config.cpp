// SPDX-License-Identifier: Apache-2.0
#include "dysi/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <sstream>

#include "dysi/data.hpp"
#include "dysi/errors.hpp"

namespace dysi {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

std::int64_t to_i64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + value + "'");
  }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"task.kind", [](RunConfig& c, const std::string&, const std::string& v) { c.task_kind = v; }},
      {"task.train_path",
       [](RunConfig& c, const std::string&, const std::string& v) { c.train_path = v; }},
      {"task.valid_path",
       [](RunConfig& c, const std::string&, const std::string& v) { c.valid_path = v; }},
      {"task.test_path",
       [](RunConfig& c, const std::string&, const std::string& v) { c.test_path = v; }},
      {"task.lm_corpus",
       [](RunConfig& c, const std::string&, const std::string& v) { c.lm_corpus = v; }},
      {"task.lm_context",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.lm_context = to_int(k, v); }},
      {"task.vocab_mode",
       [](RunConfig& c, const std::string&, const std::string& v) { c.vocab_mode = v; }},
      {"task.vocab_min_count",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.vocab_min_count = to_int(k, v);
       }},
      {"task.n_pairs",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.n_pairs = to_int(k, v); }},
      {"task.len_min",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.len_min = to_int(k, v); }},
      {"task.len_max",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.len_max = to_int(k, v); }},
      {"task.vocab_size",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.task_vocab_size = to_int(k, v);
       }},
      {"task.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.data_seed = to_u64(k, v); }},
      {"task.holdout_fraction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.holdout_fraction = to_double(k, v);
       }},
      {"model.d_model",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.d_model = to_int(k, v); }},
      {"model.n_heads",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.n_heads = to_int(k, v); }},
      {"model.n_layers",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.n_layers = to_int(k, v); }},
      {"model.ffn_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.ffn_dim = to_int(k, v); }},
      {"model.dropout",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.dropout = to_double(k, v);
       }},
      {"model.max_positions",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.max_positions = to_int(k, v);
       }},
      {"model.mode",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "encoder-decoder")
           c.model.mode = ModelConfig::Mode::kEncoderDecoder;
         else if (v == "decoder-only")
           c.model.mode = ModelConfig::Mode::kDecoderOnly;
         else
           throw ConfigError(k + ": expected encoder-decoder or decoder-only, got '" + v + "'");
       }},
      {"training.objective",
       [](RunConfig& c, const std::string&, const std::string& v) {
         objective_from_string(v);  // validates
         c.objective = v;
       }},
      {"training.alpha",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.alpha = to_double(k, v); }},
      {"training.beta",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.beta = to_double(k, v); }},
      {"training.label_smoothing",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.label_smoothing = to_double(k, v);
       }},
      {"training.lr_peak",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.lr_peak = to_double(k, v); }},
      {"training.warmup_steps",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.warmup_steps = to_int(k, v);
       }},
      {"training.max_steps",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.max_steps = to_int(k, v); }},
      {"training.max_tokens",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.max_tokens = to_i64(k, v); }},
      {"training.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      {"training.checkpoint_every",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.checkpoint_every = to_int(k, v);
       }},
      {"training.init_checkpoint",
       [](RunConfig& c, const std::string&, const std::string& v) { c.init_checkpoint = v; }},
      {"training.ss_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v != "exponential" && v != "linear")
           throw ConfigError(k + ": expected exponential or linear, got '" + v + "'");
         c.ss_decay = v;
       }},
      {"training.ss_k",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.ss_k = to_double(k, v); }},
      {"training.ss_decay_unit",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ss_decay_unit = to_double(k, v);
       }},
      {"training.ss_c",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.ss_c = to_double(k, v); }},
      {"training.ss_eps_min",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ss_eps_min = to_double(k, v);
       }},
      {"training.target_accuracy",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.target_accuracy = to_double(k, v);
       }},
      {"training.stop_at_target",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "true" || v == "1")
           c.stop_at_target = true;
         else if (v == "false" || v == "0")
           c.stop_at_target = false;
         else
           throw ConfigError(k + ": expected true or false, got '" + v + "'");
       }},
      {"training.accuracy_check_every",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.accuracy_check_every = to_int(k, v);
       }},
      {"decoding.strategy",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v != "greedy" && v != "beam" && v != "nucleus")
           throw ConfigError(k + ": expected greedy, beam, or nucleus, got '" + v + "'");
         c.decode_strategy = v;
       }},
      {"decoding.beam_size",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.beam_size = to_int(k, v); }},
      {"decoding.length_norm",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.length_norm = to_double(k, v);
       }},
      {"decoding.top_p",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.top_p = to_double(k, v); }},
      {"decoding.max_len",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.decode_max_len = to_int(k, v);
       }},
      {"output.dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end())
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second(config, key, value);
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

void RunConfig::validate() const {
  static const std::vector<std::string> kinds = {"copy", "reverse", "cipher", "lm", "tsv"};
  if (std::find(kinds.begin(), kinds.end(), task_kind) == kinds.end())
    throw ConfigError("task.kind: unknown task '" + task_kind + "'");
  if (task_kind == "tsv" && train_path.empty())
    throw ConfigError("task.train_path is required for tsv tasks");
  if (vocab_mode != "char" && vocab_mode != "whitespace")
    throw ConfigError("task.vocab_mode: expected char or whitespace");
  if (holdout_fraction < 0.0 || holdout_fraction > 0.4)
    throw ConfigError("task.holdout_fraction must be in [0, 0.4]");
  if (alpha < 0.0) throw ConfigError("training.alpha must be >= 0");
  if (beta < 0.0 || beta > 1.0) throw ConfigError("training.beta must be in [0,1]");
  if (lr_peak <= 0.0) throw ConfigError("training.lr_peak must be positive");
  if (warmup_steps < 1) throw ConfigError("training.warmup_steps must be >= 1");
  if (max_steps < 0) throw ConfigError("training.max_steps must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("training.checkpoint_every must be >= 1");
  if (target_accuracy < 0.0 || target_accuracy > 1.0)
    throw ConfigError("training.target_accuracy must be in [0,1]");
  if (beam_size < 1) throw ConfigError("decoding.beam_size must be >= 1");
  if (top_p <= 0.0 || top_p > 1.0) throw ConfigError("decoding.top_p must be in (0,1]");
  if (decode_max_len < 1) throw ConfigError("decoding.max_len must be >= 1");
  objective_from_string(objective);
  if (task_kind == "lm" && model.mode == ModelConfig::Mode::kEncoderDecoder)
    throw ConfigError("lm tasks require model.mode=decoder-only");
}

SchedulerConfig RunConfig::scheduler_config() const {
  SchedulerConfig sched;
  sched.beta = beta;
  sched.decay = ss_decay == "linear" ? DecayScheme::kLinear : DecayScheme::kExponential;
  sched.decay_k = ss_k;
  sched.decay_unit = ss_decay_unit;
  sched.decay_c = ss_c;
  sched.eps_min = ss_eps_min;
  return sched;
}

TrainingObjective RunConfig::training_objective() const {
  TrainingObjective obj;
  obj.objective = objective_from_string(objective);
  obj.alpha = alpha;
  obj.label_smoothing = label_smoothing;
  obj.scheduler = scheduler_config();
  return obj;
}

std::string run_config_to_string(const RunConfig& c) {
  std::ostringstream out;
  out << "task.kind=" << c.task_kind << '\n';
  if (!c.train_path.empty()) out << "task.train_path=" << c.train_path << '\n';
  if (!c.valid_path.empty()) out << "task.valid_path=" << c.valid_path << '\n';
  if (!c.test_path.empty()) out << "task.test_path=" << c.test_path << '\n';
  out << "task.lm_corpus=" << c.lm_corpus << '\n';
  out << "task.lm_context=" << c.lm_context << '\n';
  out << "task.vocab_mode=" << c.vocab_mode << '\n';
  out << "task.vocab_min_count=" << c.vocab_min_count << '\n';
  out << "task.n_pairs=" << c.n_pairs << '\n';
  out << "task.len_min=" << c.len_min << '\n';
  out << "task.len_max=" << c.len_max << '\n';
  out << "task.vocab_size=" << c.task_vocab_size << '\n';
  out << "task.seed=" << c.data_seed << '\n';
  out << "task.holdout_fraction=" << c.holdout_fraction << '\n';
  out << "model.d_model=" << c.model.d_model << '\n';
  out << "model.n_heads=" << c.model.n_heads << '\n';
  out << "model.n_layers=" << c.model.n_layers << '\n';
  out << "model.ffn_dim=" << c.model.ffn_dim << '\n';
  out << "model.dropout=" << c.model.dropout << '\n';
  out << "model.max_positions=" << c.model.max_positions << '\n';
  out << "model.mode="
      << (c.model.mode == ModelConfig::Mode::kEncoderDecoder ? "encoder-decoder" : "decoder-only")
      << '\n';
  out << "training.objective=" << c.objective << '\n';
  out << "training.alpha=" << c.alpha << '\n';
  out << "training.beta=" << c.beta << '\n';
  out << "training.label_smoothing=" << c.label_smoothing << '\n';
  out << "training.lr_peak=" << c.lr_peak << '\n';
  out << "training.warmup_steps=" << c.warmup_steps << '\n';
  out << "training.max_steps=" << c.max_steps << '\n';
  out << "training.max_tokens=" << c.max_tokens << '\n';
  out << "training.seed=" << c.seed << '\n';
  out << "training.checkpoint_every=" << c.checkpoint_every << '\n';
  if (!c.init_checkpoint.empty()) out << "training.init_checkpoint=" << c.init_checkpoint << '\n';
  out << "training.ss_decay=" << c.ss_decay << '\n';
  out << "training.ss_k=" << c.ss_k << '\n';
  out << "training.ss_decay_unit=" << c.ss_decay_unit << '\n';
  out << "training.ss_c=" << c.ss_c << '\n';
  out << "training.ss_eps_min=" << c.ss_eps_min << '\n';
  out << "training.target_accuracy=" << c.target_accuracy << '\n';
  out << "training.stop_at_target=" << (c.stop_at_target ? "true" : "false") << '\n';
  out << "training.accuracy_check_every=" << c.accuracy_check_every << '\n';
  out << "decoding.strategy=" << c.decode_strategy << '\n';
  out << "decoding.beam_size=" << c.beam_size << '\n';
  out << "decoding.length_norm=" << c.length_norm << '\n';
  out << "decoding.top_p=" << c.top_p << '\n';
  out << "decoding.max_len=" << c.decode_max_len << '\n';
  out << "output.dir=" << c.out_dir << '\n';
  return out.str();
}

}  // namespace dysi

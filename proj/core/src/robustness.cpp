// SPDX-License-Identifier: Apache-2.0
#include "dysi/robustness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <map>
#include <set>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "dysi/errors.hpp"

namespace dysi {

namespace {

// (start, length) byte spans of whitespace-separated words.
std::vector<std::pair<std::size_t, std::size_t>> word_spans(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) spans.emplace_back(start, i - start);
  }
  return spans;
}

const std::set<std::string>& stopword_set() {
  static const std::set<std::string> words = {
      "a",    "an",   "the",  "this",  "that",  "these", "those", "some", "each",  "every",
      "and",  "or",   "but",  "nor",   "so",    "yet",   "while", "because", "although",
      "if",   "then", "than", "as",    "of",    "in",    "on",    "at",   "to",    "from",
      "by",   "with", "for",  "about", "into",  "over",  "under", "near", "after", "before",
      "between", "through", "during", "above", "below", "up",    "down", "out",   "off",
      "is",   "am",   "are",  "was",   "were",  "be",    "been",  "being", "do",   "does",
      "did",  "have", "has",  "had",   "will",  "would", "shall", "should", "can", "could",
      "may",  "might", "must", "not",  "no",    "it",    "its",   "he",   "she",   "they",
      "them", "his",  "her",  "their", "we",    "us",    "our",   "you",  "your",  "i",
      "me",   "my",   "who",  "whom",  "which", "what",  "there", "here", "when",  "where",
      "how",  "why",  "all",  "any",   "both",  "few",   "more",  "most", "other", "such",
      "only", "own",  "same", "too",   "very",  "just"};
  return words;
}

std::string lowercase(const std::string& word) {
  std::string out = word;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

bool is_stopword(const std::string& word) { return stopword_set().count(lowercase(word)) != 0; }

std::string PerturbationSpec::label() const {
  switch (kind) {
    case Kind::kIdentity:
      return "identity";
    case Kind::kLastWord:
      return "last-word-" + std::to_string(param);
    case Kind::kNgram:
      return "ngram-" + std::to_string(param);
    case Kind::kReplace:
      return "replace-" + std::to_string(param);
  }
  return "identity";
}

PerturbationSpec PerturbationSpec::parse(const std::string& label) {
  PerturbationSpec spec;
  auto tail_int = [&label](const std::string& prefix) {
    const std::string tail = label.substr(prefix.size());
    try {
      return std::stoi(tail);
    } catch (const std::exception&) {
      throw ConfigError("bad perturbation parameter in '" + label + "'");
    }
  };
  if (label == "identity") {
    spec.kind = Kind::kIdentity;
  } else if (label.rfind("last-word-", 0) == 0) {
    spec.kind = Kind::kLastWord;
    spec.param = tail_int("last-word-");
  } else if (label.rfind("ngram-", 0) == 0) {
    spec.kind = Kind::kNgram;
    spec.param = tail_int("ngram-");
  } else if (label.rfind("replace-", 0) == 0) {
    spec.kind = Kind::kReplace;
    spec.param = tail_int("replace-");
  } else {
    throw ConfigError("unknown perturbation: " + label);
  }
  if (spec.kind != Kind::kIdentity && spec.param < 0)
    throw ConfigError("perturbation parameter must be >= 0: " + label);
  return spec;
}

std::vector<std::string> extract_prompts(const std::vector<std::string>& paragraphs,
                                         int words_per_prompt) {
  if (words_per_prompt < 1) throw ConfigError("extract_prompts: word budget must be positive");
  std::vector<std::string> prompts;
  for (const auto& paragraph : paragraphs) {
    const auto spans = word_spans(paragraph);
    if (static_cast<int>(spans.size()) < words_per_prompt) continue;
    std::string prompt;
    for (int w = 0; w < words_per_prompt; ++w) {
      if (w) prompt += ' ';
      prompt += paragraph.substr(spans[static_cast<std::size_t>(w)].first,
                                 spans[static_cast<std::size_t>(w)].second);
    }
    prompts.push_back(std::move(prompt));
  }
  if (prompts.empty()) throw InputError("extract_prompts: no paragraph long enough for a prompt");
  return prompts;
}

std::string perturb_last_word(const std::string& prompt, int m) {
  if (m < 0) throw ConfigError("perturb_last_word: m must be >= 0");
  const auto spans = word_spans(prompt);
  if (spans.empty() || m == 0) return prompt;
  const std::string last = prompt.substr(spans.back().first, spans.back().second);
  std::string out = prompt;
  for (int i = 0; i < m; ++i) {
    out += ' ';
    out += last;
  }
  return out;
}

std::string perturb_ngram(const std::string& prompt, int n) {
  if (n < 0) throw ConfigError("perturb_ngram: n must be >= 0");
  const auto spans = word_spans(prompt);
  if (spans.empty() || n == 0) return prompt;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), spans.size());
  std::string out = prompt;
  for (std::size_t i = spans.size() - take; i < spans.size(); ++i) {
    out += ' ';
    out += prompt.substr(spans[i].first, spans[i].second);
  }
  return out;
}

std::string perturb_replace_words(const std::string& prompt, int k, const Vocabulary& vocab,
                                  Rng& rng) {
  if (k < 0) throw ConfigError("perturb_replace_words: k must be >= 0");
  if (vocab.size() <= Vocabulary::kReserved + 1)
    throw ConfigError("perturb_replace_words: vocabulary too small for replacements");
  const auto spans = word_spans(prompt);
  if (spans.empty() || k == 0) return prompt;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const std::string word = prompt.substr(spans[i].first, spans[i].second);
    if (!is_stopword(word)) candidates.push_back(i);
  }
  if (static_cast<int>(candidates.size()) < k) {
    // Fewer content words than k: fall back to every token.
    candidates.resize(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) candidates[i] = i;
  }
  if (k > static_cast<int>(candidates.size()))
    std::cerr << "warning: replace-words k=" << k << " clamped to " << candidates.size()
              << " available tokens\n";
  const int count = std::min<int>(k, static_cast<int>(candidates.size()));
  // Partial Fisher-Yates over candidate order gives k distinct positions.
  for (int i = 0; i < count; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) + rng.uniform_int(candidates.size() - static_cast<std::size_t>(i));
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[j]);
  }
  std::vector<std::size_t> chosen(candidates.begin(), candidates.begin() + count);
  std::sort(chosen.begin(), chosen.end());

  std::string out;
  std::size_t cursor = 0;
  std::size_t next = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (next < chosen.size() && chosen[next] == i) {
      out += prompt.substr(cursor, spans[i].first - cursor);
      const std::string original = prompt.substr(spans[i].first, spans[i].second);
      std::string replacement = original;
      while (replacement == original) {
        const std::int32_t id =
            Vocabulary::kReserved +
            static_cast<std::int32_t>(rng.uniform_int(
                static_cast<std::uint64_t>(vocab.size() - Vocabulary::kReserved)));
        replacement = vocab.token_of(id);
      }
      out += replacement;
      cursor = spans[i].first + spans[i].second;
      ++next;
    }
  }
  out += prompt.substr(cursor);
  return out;
}

std::string apply_perturbation(const std::string& prompt, const PerturbationSpec& spec,
                               const Vocabulary& vocab) {
  switch (spec.kind) {
    case PerturbationSpec::Kind::kIdentity:
      return prompt;
    case PerturbationSpec::Kind::kLastWord:
      return perturb_last_word(prompt, spec.param);
    case PerturbationSpec::Kind::kNgram:
      return perturb_ngram(prompt, spec.param);
    case PerturbationSpec::Kind::kReplace: {
      Rng rng(spec.seed, Rng::mix(rng_stream::kSampling, 0x7265706cULL));
      return perturb_replace_words(prompt, spec.param, vocab, rng);
    }
  }
  return prompt;
}

namespace {

std::vector<std::string> sample_continuations(const SequenceModel& model,
                                              const std::string& prompt, const Vocabulary& vocab,
                                              const SuiteConfig& config, std::uint64_t stream_tag) {
  const auto prompt_ids = vocab.encode(prompt);
  std::vector<std::string> out;
  for (int s = 0; s < config.samples_per_model; ++s) {
    std::vector<std::int32_t> ids;
    if (config.greedy) {
      // Deterministic continuation of the prompt.
      std::vector<std::int32_t> prefix = prompt_ids;
      for (int step = 0; step < config.budget; ++step) {
        const auto row = model.next_log_probs(prefix);
        int best = 0;
        for (int w = 1; w < static_cast<int>(row.size()); ++w)
          if (row[static_cast<std::size_t>(w)] > row[static_cast<std::size_t>(best)]) best = w;
        if (best == Vocabulary::kEos) break;
        ids.push_back(best);
        prefix.push_back(best);
      }
    } else {
      Rng rng(config.seed, Rng::mix(stream_tag, static_cast<std::uint64_t>(s)));
      ids = nucleus_sample(model, prompt_ids, config.top_p, config.budget, rng);
    }
    out.push_back(vocab.decode(ids));
  }
  return out;
}

}  // namespace

SuiteResult run_completion_suite(const std::vector<CompletionModel>& models,
                                 const std::vector<std::string>& prompts,
                                 const std::vector<PerturbationSpec>& perturbations,
                                 const Vocabulary& vocab, const SuiteConfig& config,
                                 const RecordSink& sink) {
  if (models.empty()) throw InputError("completion suite: no models");
  if (prompts.empty()) throw InputError("completion suite: no prompts");
  if (perturbations.empty()) throw InputError("completion suite: no perturbations");
  if (config.samples_per_model < 1) throw ConfigError("completion suite: need >= 1 sample");

  std::vector<std::vector<CompletionRecord>> per_prompt(prompts.size());
  std::vector<std::exception_ptr> errors(prompts.size());

  auto process_prompt = [&](std::size_t prompt_idx) {
    const std::string& prompt = prompts[prompt_idx];
    for (std::size_t m = 0; m < models.size(); ++m) {
      for (std::size_t p = 0; p < perturbations.size(); ++p) {
        const auto& spec = perturbations[p];
        CompletionRecord record;
        record.prompt_index = static_cast<int>(prompt_idx);
        record.model = models[m].name;
        record.perturbation = spec.label();
        record.prompt = prompt;
        record.perturbed_prompt = apply_perturbation(prompt, spec, vocab);
        // Independent, thread-count-agnostic streams per
        // (model, prompt, perturbation, variant).
        const std::uint64_t base =
            Rng::mix(Rng::mix(rng_stream::kSampling, prompt_idx * 1000003ULL + m),
                     p * 16777619ULL);
        record.original_continuations = sample_continuations(
            *models[m].model, record.prompt, vocab, config, Rng::mix(base, 0));
        record.perturbed_continuations = sample_continuations(
            *models[m].model, record.perturbed_prompt, vocab, config, Rng::mix(base, 1));
        for (const int n : config.ngram_sizes) {
          double sum = 0.0;
          int pairs = 0;
          for (const auto& pert : record.perturbed_continuations) {
            for (const auto& orig : record.original_continuations) {
              sum += repetition_ratio_difference(split_whitespace(pert), split_whitespace(orig), n);
              ++pairs;
            }
          }
          record.deltas.push_back({n, pairs > 0 ? sum / pairs : 0.0});
        }
        per_prompt[prompt_idx].push_back(std::move(record));
      }
    }
  };

  const int threads = std::max(1, std::min<int>(config.threads, static_cast<int>(prompts.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      try {
        process_prompt(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= prompts.size()) return;
        try {
          process_prompt(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Flush in prompt order; stop at the first failed prompt.
  SuiteResult result;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (const auto& record : per_prompt[i]) {
      if (sink) sink(record);
      result.records.push_back(record);
    }
    if (errors[i]) std::rethrow_exception(errors[i]);
  }

  std::map<std::tuple<std::string, std::string, int>, std::pair<double, int>> grouped;
  for (const auto& record : result.records)
    for (const auto& row : record.deltas) {
      auto& slot = grouped[{record.model, record.perturbation, row.n}];
      slot.first += row.delta;
      slot.second += 1;
    }
  // Deterministic row order: perturbation, then n, then model order as given.
  for (const auto& spec : perturbations)
    for (const int n : config.ngram_sizes)
      for (const auto& model : models) {
        const auto it = grouped.find({model.name, spec.label(), n});
        if (it == grouped.end()) continue;
        result.summary.push_back(
            {model.name, spec.label(), n, it->second.first / it->second.second, it->second.second});
      }
  return result;
}

std::string suite_records_jsonl(const std::vector<CompletionRecord>& records) {
  std::string out;
  for (const auto& record : records) {
    for (const auto& row : record.deltas) {
      nlohmann::json j{{"model", record.model},
                       {"prompt_index", record.prompt_index},
                       {"perturbation", record.perturbation},
                       {"n", row.n},
                       {"delta_repetition", row.delta}};
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

std::string suite_summary_csv(const std::vector<SuiteSummaryRow>& summary,
                              const std::vector<std::string>& model_names) {
  std::ostringstream out;
  out << "perturbation,n";
  for (const auto& name : model_names) out << ',' << name;
  out << '\n';
  // Rows grouped by (perturbation, n); one column per model.
  std::vector<std::pair<std::string, int>> keys;
  for (const auto& row : summary) {
    const std::pair<std::string, int> key{row.perturbation, row.n};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [perturbation, n] : keys) {
    out << perturbation << ',' << n;
    for (const auto& name : model_names) {
      bool found = false;
      for (const auto& row : summary) {
        if (row.model == name && row.perturbation == perturbation && row.n == n) {
          out << ',' << row.mean_delta;
          found = true;
          break;
        }
      }
      if (!found) out << ',';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dysi

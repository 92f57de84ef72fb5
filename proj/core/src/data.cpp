// SPDX-License-Identifier: Apache-2.0
#include "dysi/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dysi/errors.hpp"

namespace dysi {

int ParallelBatch::effective_target_len(int b) const {
  int n = 0;
  for (int t = 0; t < tgt_len; ++t)
    if (target_mask[static_cast<std::size_t>(b * tgt_len + t)] != 0.0f) ++n;
  return n;
}

std::vector<std::pair<std::string, std::string>> load_parallel_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      // A trailing newline is fine; an empty interior line is not a pair.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError(path + ":" + std::to_string(line_no) + ": empty line");
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path + ":" + std::to_string(line_no) + ": missing TAB separator");
    if (line.find('\t', tab + 1) != std::string::npos)
      throw ParseError(path + ":" + std::to_string(line_no) + ": more than one TAB separator");
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

std::vector<SequencePair> encode_pairs(
    const std::vector<std::pair<std::string, std::string>>& text_pairs, const Vocabulary& vocab) {
  std::vector<SequencePair> out;
  out.reserve(text_pairs.size());
  for (const auto& [src, tgt] : text_pairs)
    out.push_back({vocab.encode(src), vocab.encode(tgt)});
  return out;
}

ParallelBatch batch_from_pairs(const std::vector<const SequencePair*>& pairs) {
  if (pairs.empty()) throw InputError("batch_from_pairs: empty batch");
  const int b = static_cast<int>(pairs.size());
  int max_src = 0, max_tgt = 0;
  bool any_source = false;
  for (const auto* p : pairs) {
    max_src = std::max(max_src, static_cast<int>(p->source.size()));
    max_tgt = std::max(max_tgt, static_cast<int>(p->target.size()));
    any_source = any_source || !p->source.empty();
  }
  ParallelBatch batch;
  batch.batch_size = b;
  batch.src_len = any_source ? max_src + 1 : 0;  // room for EOS
  batch.tgt_len = max_tgt + 1;
  const int s = batch.src_len, t = batch.tgt_len;
  batch.source.assign(static_cast<std::size_t>(b) * s, Vocabulary::kPad);
  batch.source_mask.assign(static_cast<std::size_t>(b) * s, 0.0f);
  batch.target_input.assign(static_cast<std::size_t>(b) * t, Vocabulary::kPad);
  batch.target_output.assign(static_cast<std::size_t>(b) * t, Vocabulary::kPad);
  batch.target_mask.assign(static_cast<std::size_t>(b) * t, 0.0f);
  for (int i = 0; i < b; ++i) {
    const auto& src = pairs[static_cast<std::size_t>(i)]->source;
    const auto& tgt = pairs[static_cast<std::size_t>(i)]->target;
    if (any_source) {
      for (std::size_t j = 0; j < src.size(); ++j) {
        batch.source[static_cast<std::size_t>(i) * s + j] = src[j];
        batch.source_mask[static_cast<std::size_t>(i) * s + j] = 1.0f;
      }
      batch.source[static_cast<std::size_t>(i) * s + src.size()] = Vocabulary::kEos;
      batch.source_mask[static_cast<std::size_t>(i) * s + src.size()] = 1.0f;
    }
    batch.target_input[static_cast<std::size_t>(i) * t] = Vocabulary::kBos;
    batch.target_mask[static_cast<std::size_t>(i) * t] = 1.0f;
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      batch.target_input[static_cast<std::size_t>(i) * t + j + 1] = tgt[j];
      batch.target_output[static_cast<std::size_t>(i) * t + j] = tgt[j];
      batch.target_mask[static_cast<std::size_t>(i) * t + j + 1] = 1.0f;
    }
    batch.target_output[static_cast<std::size_t>(i) * t + tgt.size()] = Vocabulary::kEos;
  }
  return batch;
}

std::vector<ParallelBatch> make_batches(const std::vector<SequencePair>& pairs,
                                        std::int64_t max_tokens, std::uint64_t shuffle_seed) {
  if (pairs.empty()) return {};
  if (max_tokens < 2) throw ConfigError("make_batches: max_tokens must be at least 2");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed, rng_stream::kDataOrder);
  rng.shuffle(order);
  // Bucket by padded widths so batches waste little padding; the pre-shuffle
  // decides ordering inside equal-length buckets.
  std::stable_sort(order.begin(), order.end(), [&pairs](std::size_t a, std::size_t b) {
    const auto ka = std::make_pair(pairs[a].target.size(), pairs[a].source.size());
    const auto kb = std::make_pair(pairs[b].target.size(), pairs[b].source.size());
    return ka < kb;
  });
  std::vector<ParallelBatch> batches;
  std::vector<const SequencePair*> current;
  std::size_t max_src = 0, max_tgt = 0;
  auto cost = [](std::size_t rows, std::size_t s, std::size_t t) {
    return static_cast<std::int64_t>(rows) * static_cast<std::int64_t>((s + 1) + (t + 1));
  };
  for (const std::size_t idx : order) {
    const auto& p = pairs[idx];
    const std::size_t ns = std::max(max_src, p.source.size());
    const std::size_t nt = std::max(max_tgt, p.target.size());
    if (!current.empty() && cost(current.size() + 1, ns, nt) > max_tokens) {
      batches.push_back(batch_from_pairs(current));
      current.clear();
      max_src = max_tgt = 0;
    }
    current.push_back(&p);
    max_src = std::max(max_src, p.source.size());
    max_tgt = std::max(max_tgt, p.target.size());
  }
  if (!current.empty()) batches.push_back(batch_from_pairs(current));
  rng.shuffle(batches);
  return batches;
}

namespace {

std::vector<SequencePair> gen_pairs(int n, int len_min, int len_max, int vocab_size,
                                    std::uint64_t seed,
                                    const std::vector<std::int32_t>* cipher, bool reverse) {
  if (vocab_size <= Vocabulary::kReserved)
    throw ConfigError("synthetic task: vocab_size must exceed " +
                      std::to_string(Vocabulary::kReserved));
  if (n < 1 || len_min < 1 || len_max < len_min)
    throw ConfigError("synthetic task: invalid count or length range");
  Rng rng(seed, rng_stream::kCorpus);
  const int content = vocab_size - Vocabulary::kReserved;
  std::vector<SequencePair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int len =
        len_min + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(len_max - len_min + 1)));
    SequencePair pair;
    pair.source.reserve(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j)
      pair.source.push_back(Vocabulary::kReserved +
                            static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(content))));
    pair.target = pair.source;
    if (reverse) std::reverse(pair.target.begin(), pair.target.end());
    if (cipher)
      for (auto& id : pair.target) id = (*cipher)[static_cast<std::size_t>(id)];
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace

std::vector<std::int32_t> cipher_permutation(int vocab_size, std::uint64_t seed) {
  if (vocab_size <= Vocabulary::kReserved)
    throw ConfigError("cipher_permutation: vocab_size must exceed reserved range");
  std::vector<std::int32_t> content;
  for (std::int32_t id = Vocabulary::kReserved; id < vocab_size; ++id) content.push_back(id);
  Rng rng(seed, rng_stream::kCorpus + 0x10);
  rng.shuffle(content);
  // Map indexed by token id; reserved ids map to themselves.
  std::vector<std::int32_t> map(static_cast<std::size_t>(vocab_size));
  for (std::int32_t id = 0; id < Vocabulary::kReserved; ++id) map[static_cast<std::size_t>(id)] = id;
  for (std::size_t i = 0; i < content.size(); ++i)
    map[static_cast<std::size_t>(Vocabulary::kReserved) + i] = content[i];
  return map;
}

std::vector<SequencePair> gen_copy_task(int n, int len_min, int len_max, int vocab_size,
                                        std::uint64_t seed) {
  return gen_pairs(n, len_min, len_max, vocab_size, seed, nullptr, false);
}

std::vector<SequencePair> gen_reverse_task(int n, int len_min, int len_max, int vocab_size,
                                           std::uint64_t seed) {
  return gen_pairs(n, len_min, len_max, vocab_size, seed, nullptr, true);
}

std::vector<SequencePair> gen_cipher_task(int n, int len_min, int len_max, int vocab_size,
                                          std::uint64_t seed) {
  const auto perm = cipher_permutation(vocab_size, seed);
  return gen_pairs(n, len_min, len_max, vocab_size, seed, &perm, false);
}

std::vector<std::int32_t> LmCorpus::window(std::int64_t index) const {
  if (index < 0 || index >= window_count())
    throw IndexError("LM window index out of range");
  return std::vector<std::int32_t>(ids.begin() + index, ids.begin() + index + context_len);
}

ParallelBatch LmCorpus::batch(const std::vector<std::int64_t>& windows) const {
  if (windows.empty()) throw InputError("LmCorpus::batch: no windows requested");
  const int b = static_cast<int>(windows.size());
  const int t = context_len;
  ParallelBatch out;
  out.batch_size = b;
  out.src_len = 0;
  out.tgt_len = t;
  out.target_input.assign(static_cast<std::size_t>(b) * t, Vocabulary::kPad);
  out.target_output.assign(static_cast<std::size_t>(b) * t, Vocabulary::kPad);
  out.target_mask.assign(static_cast<std::size_t>(b) * t, 1.0f);
  for (int i = 0; i < b; ++i) {
    const auto w = window(windows[static_cast<std::size_t>(i)]);
    out.target_input[static_cast<std::size_t>(i) * t] = Vocabulary::kBos;
    for (int j = 0; j + 1 < t; ++j)
      out.target_input[static_cast<std::size_t>(i) * t + j + 1] = w[static_cast<std::size_t>(j)];
    for (int j = 0; j < t; ++j)
      out.target_output[static_cast<std::size_t>(i) * t + j] = w[static_cast<std::size_t>(j)];
  }
  return out;
}

ParallelBatch LmCorpus::sample_batch(std::int64_t max_tokens, Rng& rng) const {
  const std::int64_t count = window_count();
  if (count == 0) throw InputError("LM corpus shorter than one context window");
  const std::int64_t rows = std::max<std::int64_t>(1, max_tokens / context_len);
  std::vector<std::int64_t> windows;
  windows.reserve(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i)
    windows.push_back(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(count))));
  return batch(windows);
}

LmCorpus gen_char_lm_corpus(const std::string& text, const Vocabulary& vocab, int context_len) {
  if (context_len < 2) throw ConfigError("LM context length must be at least 2");
  LmCorpus corpus;
  corpus.context_len = context_len;
  corpus.ids = vocab.encode(text);
  return corpus;
}

// ---------------------------------------------------------------------------
// Builtin corpus
// ---------------------------------------------------------------------------

namespace {

const char* const kNouns[] = {
    "river",   "road",    "house",   "morning", "garden",  "letter",  "window",  "village",
    "evening", "door",    "light",   "table",   "market",  "bridge",  "forest",  "field",
    "mountain", "winter", "summer",  "harbor",  "street",  "child",   "teacher", "stranger",
    "journey", "shadow",  "stone",   "tower",   "castle",  "meadow",  "valley",  "lantern",
    "engine",  "clock",   "mirror",  "candle",  "basket",  "bottle",  "ship",    "boat",
    "train",   "wagon",   "library", "school",  "church",  "cottage", "kitchen", "cellar",
    "orchard", "island",  "coast",   "storm",   "rain",    "snow",    "wind",    "fire",
    "painter", "writer",  "sailor",  "farmer",  "doctor",  "soldier", "horse",   "sparrow"};

const char* const kNames[] = {"Anna",  "Peter", "Maria", "Thomas", "Elena",
                              "Robert", "Clara", "Henry", "Sofia",  "Daniel"};

const char* const kVerbs[] = {
    "crossed",  "watched",   "followed", "carried", "opened",   "closed",  "remembered",
    "reached",  "entered",   "found",    "lost",    "built",    "repaired", "painted",
    "wrote",    "read",      "studied",  "visited", "greeted",  "answered", "asked",
    "promised", "refused",   "gathered", "lifted",  "guarded",  "waited",  "wandered",
    "returned", "rested",    "listened", "whispered", "shouted", "smiled",  "nodded",
    "vanished", "appeared",  "trembled", "forgot",  "scattered"};

const char* const kAdjectives[] = {
    "old",     "young",   "quiet",  "bright", "dark",    "narrow",  "wide",    "heavy",
    "distant", "nearby",  "ancient", "gentle", "fierce",  "calm",    "restless", "golden",
    "silver",  "wooden",  "cold",   "warm",   "empty",   "crowded", "hidden",  "familiar",
    "strange", "tall",    "deep",   "early",  "late",    "pale",    "weary",   "eager",
    "patient", "careless", "small", "great"};

const char* const kAdverbs[] = {"slowly",  "quickly", "quietly",  "carefully", "suddenly",
                                "finally", "often",   "rarely",   "almost",    "together",
                                "alone",   "again",   "soon",     "twice",     "nearly",
                                "everywhere"};

const char* const kDeterminers[] = {"the", "the", "the", "a", "this", "that", "every", "some"};
const char* const kPrepositions[] = {"of",     "in",    "on",     "under",  "near",
                                     "with",   "from",  "beyond", "across", "behind",
                                     "before", "after", "between", "through"};
const char* const kConjunctions[] = {"and", "but", "while", "because", "until", "when"};

// Sentence skeletons: placeholder letters expand to word classes, everything
// else is literal. N noun, M maybe-name, V verb, A adjective, R adverb,
// D determiner, P preposition, C conjunction.
const char* const kTemplates[] = {
    "D A N V D N P D N.",
    "D N V R C D N V D N.",
    "P D A N, D N V D N.",
    "D N P D N V D A N.",
    "D N V, C D A N V R.",
    "R, D N V D N P D A N.",
    "D N and D N V D A N.",
    "M V D N C D N was A.",
    "M V R and V D N P D N.",
    "D A N was A, C D N V.",
};

template <std::size_t N>
const char* zipf_pick(const char* const (&words)[N], Rng& rng) {
  // u^2 skews toward early entries, giving a natural frequency profile.
  const double u = rng.uniform_double();
  const std::size_t idx = static_cast<std::size_t>(u * u * static_cast<double>(N));
  return words[idx >= N ? N - 1 : idx];
}

std::string render_sentence(Rng& rng) {
  const char* tpl = kTemplates[rng.uniform_int(std::size(kTemplates))];
  std::string out;
  for (const char* p = tpl; *p; ++p) {
    switch (*p) {
      case 'N':
        out += zipf_pick(kNouns, rng);
        break;
      case 'M':
        out += kNames[rng.uniform_int(std::size(kNames))];
        break;
      case 'V':
        out += zipf_pick(kVerbs, rng);
        break;
      case 'A':
        out += zipf_pick(kAdjectives, rng);
        break;
      case 'R':
        out += zipf_pick(kAdverbs, rng);
        break;
      case 'D':
        out += kDeterminers[rng.uniform_int(std::size(kDeterminers))];
        break;
      case 'P':
        out += kPrepositions[rng.uniform_int(std::size(kPrepositions))];
        break;
      case 'C':
        out += kConjunctions[rng.uniform_int(std::size(kConjunctions))];
        break;
      default:
        out += *p;
    }
  }
  out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

std::string builtin_corpus_text(std::uint64_t seed, std::size_t min_bytes) {
  Rng rng(seed, rng_stream::kCorpus + 0x20);
  std::string out;
  out.reserve(min_bytes + 1024);
  while (out.size() < min_bytes) {
    const int sentences = 5 + static_cast<int>(rng.uniform_int(5));
    for (int s = 0; s < sentences; ++s) {
      if (s) out += ' ';
      out += render_sentence(rng);
    }
    out += '\n';
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
  if (!out) throw IoError("failed while writing file: " + path);
}

}  // namespace dysi

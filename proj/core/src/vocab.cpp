// SPDX-License-Identifier: Apache-2.0
#include "dysi/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "dysi/errors.hpp"

namespace dysi {

std::vector<std::string> split_utf8_chars(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((lead & 0x80u) == 0x00u)
      len = 1;
    else if ((lead & 0xE0u) == 0xC0u)
      len = 2;
    else if ((lead & 0xF0u) == 0xE0u)
      len = 3;
    else if ((lead & 0xF8u) == 0xF0u)
      len = 4;
    if (i + len > text.size()) len = 1;  // tolerate truncated trailing bytes
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

void Vocabulary::add_token(const std::string& token) {
  token_to_id_[token] = static_cast<std::int32_t>(id_to_token_.size());
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::with_reserved(TokenMode mode) {
  Vocabulary v;
  v.mode_ = mode;
  v.add_token("<pad>");
  v.add_token("<bos>");
  v.add_token("<eos>");
  v.add_token("<unk>");
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus_lines, TokenMode mode,
                             int min_count) {
  if (corpus_lines.empty()) throw InputError("build_vocab: empty corpus");
  std::map<std::string, std::int64_t> counts;  // ordered map keeps ties lexicographic
  for (const auto& line : corpus_lines) {
    const auto tokens =
        mode == TokenMode::kChar ? split_utf8_chars(line) : split_whitespace(line);
    for (const auto& t : tokens) counts[t] += 1;
  }
  if (counts.empty()) throw InputError("build_vocab: corpus contains no tokens");
  std::vector<std::pair<std::string, std::int64_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v = with_reserved(mode);
  for (const auto& [token, count] : entries) {
    if (count >= min_count) v.add_token(token);
  }
  return v;
}

Vocabulary Vocabulary::synthetic(int vocab_size) {
  if (vocab_size <= kReserved)
    throw ConfigError("synthetic vocabulary needs size > " + std::to_string(kReserved));
  Vocabulary v = with_reserved(TokenMode::kWhitespace);
  for (int i = 0; i < vocab_size - kReserved; ++i) v.add_token("w" + std::to_string(i));
  return v;
}

std::int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || id >= size())
    throw IndexError("token id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode(const std::string& text) const {
  const auto tokens =
      mode_ == TokenMode::kChar ? split_utf8_chars(text) : split_whitespace(text);
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id_of(t));
  return out;
}

std::string Vocabulary::decode(const std::vector<std::int32_t>& ids) const {
  std::string out;
  bool first = true;
  for (const std::int32_t id : ids) {
    const std::string& tok = token_of(id);
    if (mode_ == TokenMode::kWhitespace) {
      if (!first) out += ' ';
      first = false;
    }
    out += tok;
  }
  return out;
}

std::uint64_t Vocabulary::digest() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto feed = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  feed(mode_ == TokenMode::kChar ? 1 : 2);
  for (const auto& token : id_to_token_) {
    for (const char c : token) feed(static_cast<unsigned char>(c));
    feed(0);
  }
  return h;
}

}  // namespace dysi

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace dysi {

enum class TokenMode { kChar, kWhitespace };

// Splits UTF-8 text into code points (char mode) or whitespace-separated
// words. Both return token strings.
std::vector<std::string> split_utf8_chars(const std::string& text);
std::vector<std::string> split_whitespace(const std::string& text);

// Bidirectional token/id map with fixed reserved ids. Ids are assigned by
// descending frequency, ties broken lexicographically, so two builds over the
// same corpus are identical.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kBos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kReserved = 4;

  static Vocabulary build(const std::vector<std::string>& corpus_lines, TokenMode mode,
                          int min_count = 1);
  // Placeholder tokens w0..w{n-1} for synthetic id-level tasks; total size
  // is vocab_size including the reserved entries.
  static Vocabulary synthetic(int vocab_size);

  std::int32_t id_of(const std::string& token) const;  // kUnk when missing
  const std::string& token_of(std::int32_t id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  TokenMode mode() const { return mode_; }

  std::vector<std::int32_t> encode(const std::string& text) const;
  std::string decode(const std::vector<std::int32_t>& ids) const;

  // Content hash covering mode and every token in id order.
  std::uint64_t digest() const;

 private:
  TokenMode mode_ = TokenMode::kWhitespace;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;

  void add_token(const std::string& token);
  static Vocabulary with_reserved(TokenMode mode);
};

}  // namespace dysi

#pragma once

// Token sequences and the word tokenizer shared by ingestion and encoding.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tagattack/errors.hpp"

namespace tagattack {

namespace detail {

// ASCII alphanumerics plus any byte of a multi-byte UTF-8 sequence.
inline bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         c >= 0x80;
}

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace detail

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = detail::ascii_lower(c);
  return out;
}

// A word sequence with a parallel [MASK] flag per position. Masking never
// reorders or removes positions.
class TokenSequence {
 public:
  TokenSequence() = default;
  explicit TokenSequence(std::vector<std::string> tokens)
      : tokens_(std::move(tokens)), mask_(tokens_.size(), 0) {}

  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }

  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  bool is_masked(std::size_t i) const { return mask_.at(i) != 0; }

  std::size_t masked_count() const noexcept {
    std::size_t n = 0;
    for (auto m : mask_) n += m;
    return n;
  }

  // Copy with the given positions masked (in addition to any already masked).
  TokenSequence masked(std::span<const std::size_t> positions) const {
    TokenSequence out = *this;
    for (std::size_t p : positions) {
      if (p >= out.size()) throw PreconditionError("mask position out of range");
      out.mask_[p] = 1;
    }
    return out;
  }

  // Copy with a word-for-word substitution at `position`.
  TokenSequence replaced(std::size_t position, std::string word) const {
    if (position >= size()) throw PreconditionError("replacement position out of range");
    TokenSequence out = *this;
    out.tokens_[position] = std::move(word);
    return out;
  }

  std::string joined(char sep = ' ') const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (i) out.push_back(sep);
      out += mask_[i] ? std::string("[MASK]") : tokens_[i];
    }
    return out;
  }

  bool operator==(const TokenSequence&) const = default;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint8_t> mask_;
};

// Lowercases ASCII, splits on runs of non-alphanumeric bytes, drops empty
// tokens. UTF-8 multi-byte characters are kept inside words.
inline TokenSequence tokenize(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (detail::is_word_byte(c)) {
      current.push_back(detail::ascii_lower(ch));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return TokenSequence(std::move(tokens));
}

}  // namespace tagattack

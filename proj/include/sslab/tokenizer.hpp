// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sslab {

enum class TokenizerKind { character, subword };

TokenizerKind parse_tokenizer_kind(const std::string& s);
const char* to_string(TokenizerKind kind);

/// Word-boundary marker prepended to the first symbol of every word.
inline constexpr std::string_view kWordMarker = "\xE2\x96\x81";  // U+2581

/// Character or BPE subword tokenizer for CTC targets. Id 0 is the CTC
/// blank and is never produced by encode(); token ids run 1..vocab_size().
class Tokenizer {
 public:
  static constexpr int kBlank = 0;

  /// Alphabet only (no merges).
  static Tokenizer train_char(std::span<const std::string> corpus);

  /// Greedy BPE: repeatedly merges the most frequent adjacent pair, ties by
  /// lexicographic (left, right) order, until vocab_size tokens exist or no
  /// pair remains.
  static Tokenizer train_subword(std::span<const std::string> corpus, int vocab_size);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  TokenizerKind kind() const { return kind_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  int alphabet_size() const { return alphabet_size_; }

  /// Text: "kind <k>", "vocab <n>" + n tokens, "merges <m>" + m "left right" lines.
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);
  std::string to_text() const;
  static Tokenizer from_text(const std::string& text, const std::string& source = "tokenizer");

 private:
  void index_tokens();
  std::vector<std::string> word_symbols(std::string_view word) const;

  TokenizerKind kind_ = TokenizerKind::character;
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::string, int> token_ids_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
  int alphabet_size_ = 0;
};

/// Whitespace-separated words.
std::vector<std::string> split_words(std::string_view text);

}  // namespace sslab

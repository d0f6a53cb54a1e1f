// SPDX-License-Identifier: Apache-2.0

#include "sslab/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "sslab/common.hpp"

namespace sslab {

namespace {

std::vector<std::string> utf8_symbols(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (lead >= 0xF0)
      len = 4;
    else if (lead >= 0xE0)
      len = 3;
    else if (lead >= 0xC0)
      len = 2;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

using Pair = std::pair<std::string, std::string>;

void merge_pair(std::vector<std::string>& symbols, const Pair& pair) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(pair.first + pair.second);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

}  // namespace

TokenizerKind parse_tokenizer_kind(const std::string& s) {
  if (s == "char") return TokenizerKind::character;
  if (s == "subword") return TokenizerKind::subword;
  throw ConfigError("tokenizer.kind must be 'char' or 'subword', got '" + s + "'");
}

const char* to_string(TokenizerKind kind) { return kind == TokenizerKind::character ? "char" : "subword"; }

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::vector<std::string> Tokenizer::word_symbols(std::string_view word) const {
  std::vector<std::string> symbols{std::string(kWordMarker)};
  for (auto& s : utf8_symbols(word)) symbols.push_back(std::move(s));
  return symbols;
}

void Tokenizer::index_tokens() {
  token_ids_.clear();
  merge_rank_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) token_ids_[tokens_[i]] = static_cast<int>(i) + 1;
  for (std::size_t i = 0; i < merges_.size(); ++i) merge_rank_[merges_[i]] = static_cast<int>(i);
}

Tokenizer Tokenizer::train_char(std::span<const std::string> corpus) {
  if (corpus.empty()) throw Error("empty corpus");
  std::set<std::string> alphabet{std::string(kWordMarker)};
  bool any_word = false;
  for (const auto& line : corpus) {
    for (const auto& word : split_words(line)) {
      any_word = true;
      for (auto& s : utf8_symbols(word)) alphabet.insert(std::move(s));
    }
  }
  if (!any_word) throw Error("empty corpus");
  Tokenizer tok;
  tok.kind_ = TokenizerKind::character;
  tok.tokens_.assign(alphabet.begin(), alphabet.end());
  tok.alphabet_size_ = static_cast<int>(tok.tokens_.size());
  tok.index_tokens();
  return tok;
}

Tokenizer Tokenizer::train_subword(std::span<const std::string> corpus, int vocab_size) {
  Tokenizer tok = train_char(corpus);
  tok.kind_ = TokenizerKind::subword;
  if (vocab_size < tok.alphabet_size_)
    throw Error("vocab size " + std::to_string(vocab_size) + " is smaller than the alphabet (" +
                std::to_string(tok.alphabet_size_) + ")");

  std::map<std::string, long> word_counts;
  for (const auto& line : corpus)
    for (const auto& word : split_words(line)) ++word_counts[word];
  std::vector<std::pair<std::vector<std::string>, long>> words;
  for (const auto& [word, n] : word_counts) words.emplace_back(tok.word_symbols(word), n);

  std::set<std::string> known(tok.tokens_.begin(), tok.tokens_.end());
  while (static_cast<int>(tok.tokens_.size()) < vocab_size) {
    std::map<Pair, long> pair_counts;
    for (const auto& [symbols, n] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pair_counts[{symbols[i], symbols[i + 1]}] += n;
    if (pair_counts.empty()) break;

    // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
      if (it->second > best->second) best = it;

    const Pair chosen = best->first;
    tok.merges_.push_back(chosen);
    for (auto& [symbols, n] : words) merge_pair(symbols, chosen);
    const std::string merged = chosen.first + chosen.second;
    if (known.insert(merged).second) tok.tokens_.push_back(merged);
  }
  tok.index_tokens();
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& word : split_words(text)) {
    std::vector<std::string> symbols = word_symbols(word);
    while (symbols.size() > 1 && !merge_rank_.empty()) {
      int best_rank = -1;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
        if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
        }
      }
      if (best_rank < 0) break;
      merge_pair(symbols, merges_[static_cast<std::size_t>(best_rank)]);
    }
    for (const auto& s : symbols) {
      auto it = token_ids_.find(s);
      if (it == token_ids_.end()) throw Error("symbol '" + s + "' is not in the tokenizer vocabulary");
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string joined;
  for (int id : ids) {
    if (id == kBlank) continue;
    if (id < 1 || id > vocab_size()) throw Error("token id out of range: " + std::to_string(id));
    joined += tokens_[static_cast<std::size_t>(id - 1)];
  }
  std::string out;
  for (std::size_t i = 0; i < joined.size();) {
    if (joined.compare(i, kWordMarker.size(), kWordMarker) == 0) {
      if (!out.empty()) out.push_back(' ');
      i += kWordMarker.size();
    } else {
      out.push_back(joined[i++]);
    }
  }
  return out;
}

std::string Tokenizer::to_text() const {
  std::ostringstream out;
  out << "kind " << to_string(kind_) << '\n';
  out << "alphabet " << alphabet_size_ << '\n';
  out << "vocab " << tokens_.size() << '\n';
  for (const auto& t : tokens_) out << t << '\n';
  out << "merges " << merges_.size() << '\n';
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
  return out.str();
}

Tokenizer Tokenizer::from_text(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  Tokenizer tok;
  std::string key, value;
  std::size_t n = 0;
  if (!(in >> key >> value) || key != "kind") throw Error(source + ": missing kind line");
  tok.kind_ = parse_tokenizer_kind(value);
  if (!(in >> key >> tok.alphabet_size_) || key != "alphabet") throw Error(source + ": missing alphabet line");
  if (!(in >> key >> n) || key != "vocab") throw Error(source + ": missing vocab line");
  tok.tokens_.resize(n);
  for (auto& t : tok.tokens_)
    if (!(in >> t)) throw Error(source + ": truncated vocabulary");
  if (!(in >> key >> n) || key != "merges") throw Error(source + ": missing merges line");
  tok.merges_.resize(n);
  for (auto& [l, r] : tok.merges_)
    if (!(in >> l >> r)) throw Error(source + ": truncated merges");
  tok.index_tokens();
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_text();
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path.string());
}

}  // namespace sslab

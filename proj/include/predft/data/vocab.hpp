#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "predft/error.hpp"

namespace predft::data {

using TokenId = std::size_t;

/// Lowercases and strips everything but letters, digits and apostrophes.
inline std::string normalize_word(const std::string& w) {
  std::string out;
  for (unsigned char c : w) {
    if (std::isalnum(c) || c == '\'') out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

/// Token table with five reserved ids followed by words in descending
/// training frequency (ties broken lexicographically).
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kSep = 4;
  static constexpr std::size_t kReserved = 5;

  Vocab() { reset_reserved(); }

  static Vocab build(const std::vector<std::string>& training_words) {
    std::map<std::string, std::size_t> counts;
    for (const auto& w : training_words) {
      std::string n = normalize_word(w);
      if (!n.empty()) ++counts[n];
    }
    std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [w, c] : ordered) v.push(w);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  bool contains(const std::string& w) const { return index_.count(w) != 0; }

  TokenId id(const std::string& word) const {
    auto it = index_.find(normalize_word(word));
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<TokenId> tokenize(const std::vector<std::string>& words) const {
    std::vector<TokenId> ids;
    ids.reserve(words.size());
    for (const auto& w : words) {
      if (normalize_word(w).empty()) continue;
      ids.push_back(id(w));
    }
    return ids;
  }

  /// Drops pad/bos/eos/separator ids; unknowns render as "<unk>".
  std::vector<std::string> detokenize(const std::vector<TokenId>& ids) const {
    std::vector<std::string> out;
    for (TokenId i : ids) {
      if (i == kPad || i == kBos || i == kEos || i == kSep) continue;
      out.push_back(i < tokens_.size() ? tokens_[i] : tokens_[kUnk]);
    }
    return out;
  }

  nlohmann::json to_json() const { return tokens_; }

  static Vocab from_json(const nlohmann::json& j) {
    const auto tokens = j.get<std::vector<std::string>>();
    if (tokens.size() < kReserved) throw ValidationError("vocabulary is missing reserved tokens");
    Vocab v;
    for (std::size_t i = 0; i < kReserved; ++i)
      if (tokens[i] != v.tokens_[i]) throw ValidationError("vocabulary reserved tokens differ");
    for (std::size_t i = kReserved; i < tokens.size(); ++i) v.push(tokens[i]);
    return v;
  }

 private:
  void reset_reserved() {
    tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"};
    index_.clear();
  }

  void push(const std::string& w) {
    if (index_.count(w)) throw ValidationError("duplicate vocabulary entry '" + w + "'");
    index_.emplace(w, tokens_.size());
    tokens_.push_back(w);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace predft::data

#pragma once

// Problem-text tokenization and vocabularies.

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mwpgen/container.hpp"
#include "mwpgen/numbers.hpp"

namespace mwpgen {

// Lowercases, splits on whitespace and punctuation, keeps numerals (with
// decimal points and digit-group commas) as single canonicalized tokens.
inline std::vector<std::string> tokenize_problem(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto digit = [&](std::size_t k) {
    return k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]));
  };
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (digit(i) || (text[i] == '.' && digit(i + 1))) {
      const std::size_t b = i;
      bool point = false;
      while (i < text.size()) {
        if (digit(i)) {
          ++i;
        } else if (text[i] == '.' && !point && digit(i + 1)) {
          point = true;
          ++i;
        } else if (text[i] == ',' && !point && digit(i + 1) && digit(i + 2) && digit(i + 3) &&
                   !digit(i + 4)) {
          ++i;
        } else {
          break;
        }
      }
      out.push_back(*canonical_number(text.substr(b, i - b)));
    } else if (std::isalpha(c) || c >= 0x80) {
      std::string word;
      while (i < text.size()) {
        const auto d = static_cast<unsigned char>(text[i]);
        if (std::isalpha(d) || d >= 0x80) {
          word.push_back(static_cast<char>(std::tolower(d)));
          ++i;
        } else if (d == '\'' && !word.empty() && i + 1 < text.size() &&
                   std::isalpha(static_cast<unsigned char>(text[i + 1]))) {
          word.push_back('\'');
          ++i;
        } else {
          break;
        }
      }
      out.push_back(std::move(word));
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;
  static constexpr std::size_t kMask = 4;
  static constexpr std::size_t kReserved = 5;
  static constexpr std::array<std::string_view, kReserved> kReservedNames = {"<pad>", "<unk>", "<s>",
                                                                              "</s>", "[M]"};

  Vocabulary() {
    for (auto n : kReservedNames) push(std::string(n));
  }

  // Reserved entries are implied; `tokens` lists the rest in id order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
      if (v.index_.count(t)) throw FormatError("duplicate vocabulary entry '" + t + "'");
      v.push(t);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view t) const { return index_.count(std::string(t)) > 0; }
  std::size_t id(std::string_view t) const {
    auto it = index_.find(std::string(t));
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> regular_tokens() const {
    return {tokens_.begin() + kReserved, tokens_.end()};
  }

  std::string serialize() const { return join_lines(regular_tokens()); }
  static Vocabulary deserialize(const std::string& s) {
    std::vector<std::string> toks;
    std::size_t b = 0;
    while (b < s.size()) {
      auto e = s.find('\n', b);
      if (e == std::string::npos) e = s.size();
      toks.push_back(s.substr(b, e - b));
      b = e + 1;
    }
    return from_tokens(toks);
  }
  std::uint64_t hash() const { return fnv1a64(serialize()); }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  static std::string join_lines(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s.push_back('\n');
      s += v[i];
    }
    return s;
  }
  void push(std::string t) {
    index_.emplace(t, tokens_.size());
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Tokens seen at least `min_freq` times get ids after the reserved block,
// ordered by descending count then lexicographically; the rest map to UNK.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                              std::size_t min_freq = 2) {
  if (corpus.empty()) throw Error("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (const auto& t : doc) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [t, n] : counts) {
    bool reserved = std::find(Vocabulary::kReservedNames.begin(), Vocabulary::kReservedNames.end(),
                              t) != Vocabulary::kReservedNames.end();
    if (n >= min_freq && !reserved) kept.emplace_back(t, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [t, _] : kept) tokens.push_back(t);
  return Vocabulary::from_tokens(tokens);
}

}  // namespace mwpgen

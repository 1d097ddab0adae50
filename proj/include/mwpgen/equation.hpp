#pragma once

// Equation lexing into typed math tokens, number masking for templates, and
// variable renaming.

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mwpgen/numbers.hpp"
#include "mwpgen/tensor.hpp"

namespace mwpgen {

class ParseError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::string_view kMaskToken = "[M]";

enum class TokenKind { kOperator = 0, kNumber = 1, kVariable = 2 };
inline constexpr std::size_t kTokenKinds = 3;

inline std::string_view kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::kOperator: return "operator";
    case TokenKind::kNumber: return "number";
    case TokenKind::kVariable: return "variable";
  }
  return "?";
}

struct TypedToken {
  std::string surface;
  TokenKind kind = TokenKind::kOperator;
  // Canonical decimal spelling; set for every number except the mask itself.
  std::optional<std::string> value;

  bool is_number() const { return kind == TokenKind::kNumber; }
  bool is_mask() const { return kind == TokenKind::kNumber && surface == kMaskToken; }
};

struct EquationSequence {
  std::vector<TypedToken> tokens;
  std::vector<std::string> masked;      // template: numbers replaced by [M]
  std::vector<std::size_t> boundaries;  // exclusive end index of each equation

  std::size_t size() const { return tokens.size(); }
  std::size_t equation_count() const { return boundaries.size(); }

  std::vector<std::size_t> number_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i].is_number() && tokens[i].value) out.push_back(i);
    return out;
  }
};

inline bool is_operator_char(char c) {
  switch (c) {
    case '+': case '-': case '*': case '/': case '^': case '=': case '(': case ')':
      return true;
    default:
      return false;
  }
}

namespace detail {

inline void lex_equation(std::string_view raw, EquationSequence& seq) {
  const std::size_t start = seq.tokens.size();
  int depth = 0;
  std::size_t i = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(what + " at column " + std::to_string(i + 1) + " in \"" + std::string(raw) + "\"");
  };
  while (i < raw.size()) {
    const char c = raw[i];
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      ++i;
    } else if (std::isdigit(uc) ||
               (c == '.' && i + 1 < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i + 1])))) {
      const std::size_t b = i;
      bool point = false;
      while (i < raw.size()) {
        const char d = raw[i];
        if (std::isdigit(static_cast<unsigned char>(d))) {
          ++i;
        } else if (d == '.' && !point && i + 1 < raw.size() &&
                   std::isdigit(static_cast<unsigned char>(raw[i + 1]))) {
          point = true;
          ++i;
        } else {
          break;
        }
      }
      std::string surface(raw.substr(b, i - b));
      seq.tokens.push_back({surface, TokenKind::kNumber, canonical_number(surface)});
      seq.masked.emplace_back(kMaskToken);
    } else if (std::isalpha(uc)) {
      if (i + 1 < raw.size() && std::isalpha(static_cast<unsigned char>(raw[i + 1])))
        fail("multi-letter identifier");
      seq.tokens.push_back({std::string(1, c), TokenKind::kVariable, std::nullopt});
      seq.masked.emplace_back(1, c);
      ++i;
    } else if (raw.substr(i, kMaskToken.size()) == kMaskToken) {
      seq.tokens.push_back({std::string(kMaskToken), TokenKind::kNumber, std::nullopt});
      seq.masked.emplace_back(kMaskToken);
      i += kMaskToken.size();
    } else if (is_operator_char(c)) {
      if (c == '(') ++depth;
      if (c == ')' && --depth < 0) fail("unbalanced ')'");
      seq.tokens.push_back({std::string(1, c), TokenKind::kOperator, std::nullopt});
      seq.masked.emplace_back(1, c);
      ++i;
    } else {
      fail(std::string("illegal character '") + c + "'");
    }
  }
  if (depth != 0) throw ParseError("unbalanced '(' in \"" + std::string(raw) + "\"");
  if (seq.tokens.size() == start) throw ParseError("empty equation");
  seq.boundaries.push_back(seq.tokens.size());
}

}  // namespace detail

// Lexes one equation. Numbers are maximal-munch decimals, single letters are
// variables; the number-masked template is produced in the same pass.
inline EquationSequence tokenize_equation(std::string_view raw) {
  EquationSequence seq;
  detail::lex_equation(raw, seq);
  return seq;
}

// Lexes an equation set into one sequence with per-equation boundaries.
inline EquationSequence tokenize_equations(const std::vector<std::string>& raw) {
  if (raw.empty()) throw ParseError("empty equation set");
  EquationSequence seq;
  for (const auto& e : raw) detail::lex_equation(e, seq);
  return seq;
}

// One string per equation, surfaces joined without spaces.
inline std::vector<std::string> detokenize(const EquationSequence& seq) {
  std::vector<std::string> out;
  std::size_t b = 0;
  for (auto end : seq.boundaries) {
    std::string s;
    for (std::size_t i = b; i < end; ++i) s += seq.tokens[i].surface;
    out.push_back(std::move(s));
    b = end;
  }
  return out;
}

// Text of the equation with every numeral replaced by [M].
inline std::string mask_numbers(std::string_view raw) {
  std::string out;
  for (const auto& s : tokenize_equation(raw).masked) out += s;
  return out;
}

// Renames variables to x, y, z in first-appearance order across the set.
inline std::vector<std::string> normalize_variables(const std::vector<std::string>& equations) {
  static constexpr char kNames[] = {'x', 'y', 'z'};
  std::map<char, char> rename;
  std::vector<std::string> out;
  out.reserve(equations.size());
  for (const auto& eq : equations) {
    std::string s = eq;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!std::isalpha(static_cast<unsigned char>(s[i]))) continue;
      if (i + 1 < s.size() && std::isalpha(static_cast<unsigned char>(s[i + 1])))
        throw ParseError("multi-letter identifier in \"" + eq + "\"");
      auto it = rename.find(s[i]);
      if (it == rename.end()) {
        if (rename.size() == 3) throw ParseError("more than 3 distinct variables in equation set");
        it = rename.emplace(s[i], kNames[rename.size()]).first;
      }
      s[i] = it->second;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mwpgen

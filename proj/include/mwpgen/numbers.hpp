#pragma once

#include <cctype>
#include <optional>
#include <string>
#include <string_view>

namespace mwpgen {

// Canonical decimal spelling: digit-group commas dropped, leading zeros and
// trailing fractional zeros stripped ("0.50" -> "0.5", "007" -> "7",
// "1,000" -> "1000", ".5" -> "0.5", "3." -> "3"). Returns nullopt when `s`
// is not a plain unsigned decimal numeral.
inline std::optional<std::string> canonical_number(std::string_view s) {
  std::string digits;
  bool seen_point = false, seen_digit = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digits.push_back(c);
      seen_digit = true;
    } else if (c == '.' && !seen_point) {
      digits.push_back('.');
      seen_point = true;
    } else if (c == ',' && seen_digit && !seen_point && i + 1 < s.size() &&
               std::isdigit(static_cast<unsigned char>(s[i + 1]))) {
      continue;
    } else {
      return std::nullopt;
    }
  }
  if (!seen_digit) return std::nullopt;
  std::string integral = digits, fraction;
  if (auto p = digits.find('.'); p != std::string::npos) {
    integral = digits.substr(0, p);
    fraction = digits.substr(p + 1);
  }
  const auto first = integral.find_first_not_of('0');
  integral = first == std::string::npos ? "0" : integral.substr(first);
  while (!fraction.empty() && fraction.back() == '0') fraction.pop_back();
  return fraction.empty() ? integral : integral + "." + fraction;
}

inline bool is_number_token(std::string_view s) { return canonical_number(s).has_value(); }

}  // namespace mwpgen

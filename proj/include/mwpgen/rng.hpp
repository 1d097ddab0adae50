#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace mwpgen {

// Generator seeded from a base seed plus stream coordinates (epoch, step...),
// so any point of a run can be replayed without replaying what came before.
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words = {std::uint32_t(seed), std::uint32_t(seed >> 32)};
  for (auto s : stream) words.push_back(std::uint32_t(s)), words.push_back(std::uint32_t(s >> 32));
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace mwpgen

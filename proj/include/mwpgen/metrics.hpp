#pragma once

// Corpus metrics for generated problems: BLEU up to bigrams, ROUGE-L,
// distinct-n and number recall.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mwpgen/numbers.hpp"
#include "mwpgen/tensor.hpp"

namespace mwpgen {

using Tokens = std::vector<std::string>;

inline constexpr double kRougeBeta = 1.2;

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++counts[Tokens(t.begin() + std::ptrdiff_t(i), t.begin() + std::ptrdiff_t(i + n))];
  return counts;
}

struct BleuStats {
  std::size_t matches[2] = {0, 0};
  std::size_t totals[2] = {0, 0};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  void add(const Tokens& cand, const Tokens& ref) {
    for (std::size_t n = 1; n <= 2; ++n) {
      auto c = ngram_counts(cand, n), r = ngram_counts(ref, n);
      for (const auto& [g, k] : c) {
        auto it = r.find(g);
        matches[n - 1] += std::min(k, it == r.end() ? 0 : it->second);
        totals[n - 1] += k;
      }
    }
    candidate_length += cand.size();
    reference_length += ref.size();
  }

  double score() const {
    if (totals[0] == 0 || totals[1] == 0 || matches[0] == 0 || matches[1] == 0) return 0.0;
    const double logp = 0.5 * std::log(double(matches[0]) / double(totals[0])) +
                        0.5 * std::log(double(matches[1]) / double(totals[1]));
    const double c = double(candidate_length), r = double(reference_length);
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(logp);
  }
};

inline void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) throw ShapeError("candidate and reference lists differ in length");
}

inline double bleu2(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_aligned(candidates.size(), references.size());
  BleuStats s;
  for (std::size_t i = 0; i < candidates.size(); ++i) s.add(candidates[i], references[i]);
  return s.score();
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l_pair(const Tokens& cand, const Tokens& ref, double beta = kRougeBeta) {
  if (cand.empty() || ref.empty()) return 0.0;
  const double lcs = double(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double r = lcs / double(ref.size()), p = lcs / double(cand.size());
  const double b2 = beta * beta;
  return (1 + b2) * r * p / (r + b2 * p);
}

inline double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                      double beta = kRougeBeta) {
  check_aligned(candidates.size(), references.size());
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l_pair(candidates[i], references[i], beta);
  return sum / double(candidates.size());
}

inline double dist_n(const std::vector<Tokens>& candidates, std::size_t n) {
  if (n == 0) throw Error("dist_n needs n >= 1");
  std::set<Tokens> distinct;
  std::size_t total = 0;
  for (const auto& c : candidates)
    for (const auto& [g, k] : ngram_counts(c, n)) distinct.insert(g), total += k;
  return total == 0 ? 0.0 : double(distinct.size()) / double(total);
}

inline std::set<std::string> number_values(const Tokens& t) {
  std::set<std::string> v;
  for (const auto& s : t)
    if (auto c = canonical_number(s)) v.insert(*c);
  return v;
}

struct RecallCount {
  std::size_t hits = 0;
  std::size_t total = 0;
};

// Counts `expected` number tokens whose value occurs somewhere in `cand`.
inline RecallCount count_recalled(const Tokens& cand, const Tokens& expected) {
  const auto have = number_values(cand);
  RecallCount r;
  for (const auto& s : expected)
    if (auto c = canonical_number(s)) {
      ++r.total;
      r.hits += have.count(*c);
    }
  return r;
}

struct NumberRecall {
  double value = 0.0;
  bool undefined = false;
  std::size_t hits = 0;
  std::size_t total = 0;
};

// Micro-averaged. `expected` holds the reference problems, or the equation
// tokens when recall is measured against equation numbers.
inline NumberRecall number_recall(const std::vector<Tokens>& candidates, const std::vector<Tokens>& expected) {
  check_aligned(candidates.size(), expected.size());
  NumberRecall r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto c = count_recalled(candidates[i], expected[i]);
    r.hits += c.hits;
    r.total += c.total;
  }
  r.undefined = r.total == 0;
  r.value = r.undefined ? 0.0 : double(r.hits) / double(r.total);
  return r;
}

struct ExampleMetrics {
  std::string id;
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  std::size_t numbers_recalled = 0;
  std::size_t numbers_expected = 0;
};

struct MetricReport {
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  NumberRecall number_recall;
  std::string recall_denominator = "reference";
  double rouge_beta = kRougeBeta;
  std::vector<ExampleMetrics> examples;

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : examples)
      per.push_back({{"id", e.id},
                     {"bleu2", e.bleu2},
                     {"rouge_l", e.rouge_l},
                     {"numbers_recalled", e.numbers_recalled},
                     {"numbers_expected", e.numbers_expected}});
    return {{"bleu2", bleu2},
            {"rouge_l", rouge_l},
            {"rouge_beta", rouge_beta},
            {"dist1", dist1},
            {"dist2", dist2},
            {"number_recall", number_recall.value},
            {"number_recall_undefined", number_recall.undefined},
            {"number_recall_denominator", recall_denominator},
            {"examples", per}};
  }
};

// `recall_basis` is the per-example token list numbers are recalled from:
// the references by default, or the equation tokens.
inline MetricReport evaluate(const std::vector<std::string>& ids, const std::vector<Tokens>& candidates,
                             const std::vector<Tokens>& references, const std::vector<Tokens>* recall_basis = nullptr) {
  check_aligned(candidates.size(), references.size());
  check_aligned(ids.size(), candidates.size());
  const auto& basis = recall_basis ? *recall_basis : references;
  MetricReport m;
  m.bleu2 = bleu2(candidates, references);
  m.rouge_l = rouge_l(candidates, references);
  m.dist1 = dist_n(candidates, 1);
  m.dist2 = dist_n(candidates, 2);
  m.number_recall = number_recall(candidates, basis);
  m.recall_denominator = recall_basis ? "equation" : "reference";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ExampleMetrics e;
    e.id = ids[i];
    BleuStats s;
    s.add(candidates[i], references[i]);
    e.bleu2 = s.score();
    e.rouge_l = rouge_l_pair(candidates[i], references[i]);
    auto c = count_recalled(candidates[i], basis[i]);
    e.numbers_recalled = c.hits;
    e.numbers_expected = c.total;
    m.examples.push_back(e);
  }
  return m;
}

}  // namespace mwpgen

#pragma once

// Latent Dirichlet allocation by collapsed Gibbs sampling, held-out topic
// inference and keyword extraction for the topic memory.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mwpgen/container.hpp"
#include "mwpgen/numbers.hpp"

namespace mwpgen {

struct LdaConfig {
  std::size_t num_topics = 9;
  double alpha = 0.0;  // <= 0 selects 50 / num_topics
  double beta = 0.01;
  std::size_t iterations = 500;
  std::uint64_t seed = 1;
  std::size_t infer_sweeps = 50;
};

struct LdaModel {
  std::size_t num_topics = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t infer_sweeps = 50;
  std::vector<std::string> words;
  std::unordered_map<std::string, std::size_t> word_index;
  std::vector<std::vector<std::int64_t>> doc_topic;    // D x P
  std::vector<std::vector<std::int64_t>> topic_word;   // P x V
  std::vector<std::int64_t> topic_total;               // P
  std::size_t skipped_documents = 0;

  std::size_t vocabulary_size() const { return words.size(); }

  std::int64_t total_tokens() const {
    std::int64_t n = 0;
    for (auto t : topic_total) n += t;
    return n;
  }

  // Smoothed p(word | topic), topic is 0-based.
  double word_probability(std::size_t topic, std::size_t word) const {
    return (double(topic_word[topic][word]) + beta) /
           (double(topic_total[topic]) + double(words.size()) * beta);
  }

  // argmax of the smoothed doc-topic expectation, 1-based.
  int document_topic(std::size_t doc) const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < num_topics; ++k)
      if (doc_topic[doc][k] > doc_topic[doc][best]) best = k;
    return int(best) + 1;
  }
};

struct TopicAssignment {
  std::string doc_id;
  int topic_id = 1;
  std::vector<double> distribution;
};

// A standard English stopword list. Auxiliary verbs can be kept so that words
// like "do" remain available as topic keywords.
inline const std::set<std::string>& stopwords(bool keep_auxiliaries = false) {
  static const std::set<std::string> auxiliaries = {
      "am", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had", "having",
      "do", "does", "did", "doing", "will", "would", "shall", "should", "can", "could", "may",
      "might", "must"};
  static const std::set<std::string> base = {
      "a", "about", "above", "after", "again", "against", "all", "an", "and", "any", "as", "at",
      "because", "before", "below", "between", "both", "but", "by", "each", "few", "for", "from",
      "further", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if",
      "in", "into", "it", "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor",
      "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
      "out", "over", "own", "same", "she", "so", "some", "such", "than", "that", "the", "their",
      "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those", "through",
      "to", "too", "under", "until", "up", "very", "we", "what", "when", "where", "which", "while",
      "who", "whom", "why", "with", "you", "your", "yours", "yourself", "yourselves", "s", "t",
      "don't", "let", "let's", "it's", "i'm", "what's"};
  static const std::set<std::string> full = [] {
    std::set<std::string> s = base;
    s.insert(auxiliaries.begin(), auxiliaries.end());
    return s;
  }();
  return keep_auxiliaries ? base : full;
}

// Alphabetic, non-stopword tokens only.
inline std::vector<std::string> topic_document(const std::vector<std::string>& tokens,
                                               bool keep_auxiliaries = false) {
  const auto& stop = stopwords(keep_auxiliaries);
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    if (t.empty() || !std::isalpha(static_cast<unsigned char>(t[0]))) continue;
    if (stop.count(t)) continue;
    out.push_back(t);
  }
  return out;
}

namespace detail {

inline std::size_t sample_index(const std::vector<double>& weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::uniform_real_distribution<double> u(0.0, total);
  double r = u(rng);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    r -= weights[k];
    if (r < 0) return k;
  }
  return weights.size() - 1;
}

}  // namespace detail

// Runs `iterations` full collapsed-Gibbs sweeps from a seeded random
// initialization. Empty documents are skipped (counted) and keep zero rows.
inline LdaModel lda_fit(const std::vector<std::vector<std::string>>& corpus, const LdaConfig& cfg) {
  if (corpus.empty()) throw Error("lda_fit: empty corpus");
  if (cfg.iterations == 0) throw Error("lda_fit: iterations must be >= 1");
  if (cfg.num_topics == 0) throw Error("lda_fit: num_topics must be >= 1");
  LdaModel m;
  m.num_topics = cfg.num_topics;
  m.alpha = cfg.alpha > 0 ? cfg.alpha : 50.0 / double(cfg.num_topics);
  m.beta = cfg.beta;
  m.infer_sweeps = cfg.infer_sweeps;

  std::vector<std::vector<std::size_t>> docs;
  for (const auto& d : corpus) {
    std::vector<std::size_t> ids;
    for (const auto& w : d) {
      auto [it, fresh] = m.word_index.emplace(w, m.words.size());
      if (fresh) m.words.push_back(w);
      ids.push_back(it->second);
    }
    if (ids.empty()) ++m.skipped_documents;
    docs.push_back(std::move(ids));
  }
  const std::size_t P = m.num_topics, V = m.words.size();
  m.doc_topic.assign(docs.size(), std::vector<std::int64_t>(P, 0));
  m.topic_word.assign(P, std::vector<std::int64_t>(V, 0));
  m.topic_total.assign(P, 0);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, P - 1);
  std::vector<std::vector<std::size_t>> z(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (auto w : docs[d]) {
      const auto k = pick(rng);
      z[d].push_back(k);
      ++m.doc_topic[d][k], ++m.topic_word[k][w], ++m.topic_total[k];
    }
  }

  const double vbeta = double(V) * m.beta;
  std::vector<double> p(P);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      for (std::size_t n = 0; n < docs[d].size(); ++n) {
        const auto w = docs[d][n];
        auto k = z[d][n];
        --m.doc_topic[d][k], --m.topic_word[k][w], --m.topic_total[k];
        for (std::size_t j = 0; j < P; ++j)
          p[j] = (double(m.doc_topic[d][j]) + m.alpha) * (double(m.topic_word[j][w]) + m.beta) /
                 (double(m.topic_total[j]) + vbeta);
        k = detail::sample_index(p, rng);
        z[d][n] = k;
        ++m.doc_topic[d][k], ++m.topic_word[k][w], ++m.topic_total[k];
      }
    }
  }
  return m;
}

// Held-out inference with the topic-word table frozen: the document's
// assignments are resampled for model.infer_sweeps sweeps and the smoothed
// doc-topic proportions averaged over the second half of the chain. Ties go
// to the lower topic id; a document with no known words is uniform, topic 1.
inline TopicAssignment assign_topic(const std::vector<std::string>& doc, const LdaModel& model,
                                    std::uint64_t seed = 1) {
  const std::size_t P = model.num_topics;
  TopicAssignment out;
  out.distribution.assign(P, 1.0 / double(P));
  std::vector<std::size_t> ids;
  for (const auto& w : doc)
    if (auto it = model.word_index.find(w); it != model.word_index.end()) ids.push_back(it->second);
  if (ids.empty()) return out;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, P - 1);
  std::vector<std::int64_t> counts(P, 0);
  std::vector<std::size_t> z;
  for (std::size_t n = 0; n < ids.size(); ++n) z.push_back(pick(rng)), ++counts[z.back()];

  const double vbeta = double(model.words.size()) * model.beta;
  const std::size_t sweeps = std::max<std::size_t>(model.infer_sweeps, 2);
  const std::size_t burn = sweeps / 2;
  std::vector<double> acc(P, 0.0), p(P);
  for (std::size_t s = 0; s < sweeps; ++s) {
    for (std::size_t n = 0; n < ids.size(); ++n) {
      --counts[z[n]];
      for (std::size_t j = 0; j < P; ++j)
        p[j] = (double(counts[j]) + model.alpha) * (double(model.topic_word[j][ids[n]]) + model.beta) /
               (double(model.topic_total[j]) + vbeta);
      z[n] = detail::sample_index(p, rng);
      ++counts[z[n]];
    }
    if (s >= burn)
      for (std::size_t j = 0; j < P; ++j)
        acc[j] += (double(counts[j]) + model.alpha) / (double(ids.size()) + double(P) * model.alpha);
  }
  double total = 0.0;
  for (double a : acc) total += a;
  std::size_t best = 0;
  for (std::size_t j = 0; j < P; ++j) {
    out.distribution[j] = acc[j] / total;
    if (out.distribution[j] > out.distribution[best]) best = j;
  }
  out.topic_id = int(best) + 1;
  return out;
}

// Top-k words of a 1-based topic by smoothed probability, ties by word id.
inline std::vector<std::string> top_keywords(const LdaModel& model, int topic_id, std::size_t k = 30) {
  if (topic_id < 1 || std::size_t(topic_id) > model.num_topics)
    throw Error("topic id " + std::to_string(topic_id) + " out of range");
  const auto& row = model.topic_word[topic_id - 1];
  std::vector<std::size_t> order(row.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return row[a] > row[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<std::string> out;
  for (auto i : order) out.push_back(model.words[i]);
  return out;
}

inline Container lda_to_container(const LdaModel& m) {
  Container c;
  c.kind = "lda";
  c.integers["dims"] = {std::int64_t(m.num_topics), std::int64_t(m.words.size()),
                        std::int64_t(m.doc_topic.size()), std::int64_t(m.infer_sweeps),
                        std::int64_t(m.skipped_documents)};
  c.put("hyper", Tensor::vector({m.alpha, m.beta}));
  auto& dt = c.integers["doc_topic"];
  for (const auto& r : m.doc_topic) dt.insert(dt.end(), r.begin(), r.end());
  auto& tw = c.integers["topic_word"];
  for (const auto& r : m.topic_word) tw.insert(tw.end(), r.begin(), r.end());
  std::string words;
  for (std::size_t i = 0; i < m.words.size(); ++i) words += (i ? "\n" : "") + m.words[i];
  c.strings["words"] = words;
  return c;
}

inline LdaModel lda_from_container(const Container& c) {
  if (c.kind != "lda") throw FormatError("not a topic model file (kind '" + c.kind + "')");
  LdaModel m;
  const auto& dims = c.ints("dims");
  if (dims.size() != 5) throw FormatError("bad topic model dims");
  m.num_topics = std::size_t(dims[0]);
  const auto V = std::size_t(dims[1]), D = std::size_t(dims[2]);
  m.infer_sweeps = std::size_t(dims[3]);
  m.skipped_documents = std::size_t(dims[4]);
  const auto hyper = c.tensor("hyper");
  m.alpha = hyper[0], m.beta = hyper[1];
  const auto& words = c.str("words");
  for (std::size_t b = 0; V > 0 && b <= words.size();) {
    auto e = words.find('\n', b);
    if (e == std::string::npos) e = words.size();
    m.word_index.emplace(words.substr(b, e - b), m.words.size());
    m.words.push_back(words.substr(b, e - b));
    b = e + 1;
  }
  const auto& dt = c.ints("doc_topic");
  const auto& tw = c.ints("topic_word");
  if (m.words.size() != V || dt.size() != D * m.num_topics || tw.size() != m.num_topics * V)
    throw FormatError("topic model tables do not match their dims");
  m.doc_topic.assign(D, std::vector<std::int64_t>(m.num_topics));
  for (std::size_t d = 0; d < D; ++d)
    std::copy_n(dt.begin() + std::ptrdiff_t(d * m.num_topics), m.num_topics, m.doc_topic[d].begin());
  m.topic_word.assign(m.num_topics, std::vector<std::int64_t>(V));
  m.topic_total.assign(m.num_topics, 0);
  for (std::size_t k = 0; k < m.num_topics; ++k) {
    std::copy_n(tw.begin() + std::ptrdiff_t(k * V), V, m.topic_word[k].begin());
    for (auto n : m.topic_word[k]) m.topic_total[k] += n;
  }
  return m;
}

}  // namespace mwpgen

#pragma once

// Node embeddings from a residual multi-head graph attention network trained
// on link prediction with negative sampling.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mwpgen/graph.hpp"
#include "mwpgen/optim.hpp"
#include "mwpgen/parameters.hpp"
#include "mwpgen/rng.hpp"
#include "mwpgen/tensor.hpp"

namespace mwpgen {

struct GatConfig {
  std::size_t layers = 2;
  std::size_t dim = 256;
  std::size_t heads = 4;
  std::size_t epochs = 100;
  std::size_t edges_per_step = 256;  // positive edges sampled per epoch
  double learning_rate = 0.005;
  std::uint64_t seed = 1;
};

struct GatResult {
  Tensor embeddings;  // [nodes, dim]
  std::vector<double> loss_history;
};

// Input features: fixed Gaussian vectors, one per node, scaled by 1/sqrt(dim).
inline Tensor gat_initial_features(std::size_t nodes, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(double(dim)));
  std::vector<double> v(nodes * dim);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(nodes, dim, std::move(v));
}

class GatEncoder {
 public:
  GatEncoder(const ConceptGraph& graph, const GatConfig& cfg) : graph_(graph), cfg_(cfg) {
    if (graph.node_count() == 0) throw Error("cannot pretrain on an empty graph");
    if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) throw Error("dim must be a multiple of heads");
    std::mt19937_64 rng(cfg.seed);
    const std::size_t dh = cfg.dim / cfg.heads;
    for (std::size_t l = 0; l < cfg.layers; ++l)
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        const auto p = "gat/" + std::to_string(l) + "/" + std::to_string(h) + "/";
        params_.add(p + "w", {cfg.dim, dh}, rng);
        params_.add(p + "a_src", {dh, 1}, rng);
        params_.add(p + "a_dst", {dh, 1}, rng);
        params_.add(p + "rel", Tensor::zeros({graph.relations().size(), 1}, true));
      }
    features_ = gat_initial_features(graph.node_count(), cfg.dim, cfg.seed);
  }

  ParameterStore& params() { return params_; }
  const Tensor& features() const { return features_; }

  Tensor forward(Tape& tape) const {
    Tensor h = features_;
    const std::size_t n = graph_.node_count(), dh = cfg_.dim / cfg_.heads;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      std::vector<Tensor> heads;
      for (std::size_t k = 0; k < cfg_.heads; ++k) {
        const auto p = "gat/" + std::to_string(l) + "/" + std::to_string(k) + "/";
        auto z = tape.matmul(h, params_[p + "w"]);
        auto src = tape.reshape(tape.matmul(z, params_[p + "a_src"]), {n});
        auto dst = tape.reshape(tape.matmul(z, params_[p + "a_dst"]), {n});
        auto rel = tape.reshape(params_[p + "rel"], {graph_.relations().size()});
        std::vector<Tensor> rows;
        rows.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
          const auto& nb = graph_.neighbors(i);
          if (nb.empty()) {
            rows.push_back(Tensor::zeros({1, dh}));
            continue;
          }
          std::vector<std::size_t> ids, rels;
          for (const auto& x : nb) ids.push_back(x.node), rels.push_back(x.relation);
          std::vector<std::size_t> self(nb.size(), i);
          auto logits = tape.leaky_relu(
              tape.add(tape.add(tape.gather(src, self), tape.gather(dst, ids)), tape.gather(rel, rels)));
          auto weights = tape.reshape(tape.softmax(logits), {1, nb.size()});
          rows.push_back(tape.matmul(weights, tape.gather_rows(z, ids)));
        }
        heads.push_back(tape.concat_rows(rows));
      }
      // [heads][n, dh] -> [n, dim]
      std::vector<Tensor> per_node;
      per_node.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<Tensor> parts;
        for (const auto& m : heads) parts.push_back(tape.row(m, i));
        per_node.push_back(tape.concat(parts));
      }
      auto message = tape.reshape(tape.concat(per_node), {n, cfg_.dim});
      if (l + 1 < cfg_.layers) message = tape.elu(message);
      h = tape.add(h, message);
    }
    return h;
  }

 private:
  const ConceptGraph& graph_;
  GatConfig cfg_;
  ParameterStore params_;
  Tensor features_;
};

inline Tensor link_score(Tape& tape, const Tensor& h, std::size_t a, std::size_t b) {
  return tape.dot(tape.row(h, a), tape.row(h, b));
}

// Negative pairs: the head of each positive edge with a uniformly drawn node
// that is neither the head nor one of its neighbours (when such a node exists).
inline std::size_t sample_negative(const ConceptGraph& g, std::size_t head, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, g.node_count() - 1);
  std::size_t x = pick(rng);
  for (int tries = 0; tries < 20 && (x == head || g.adjacent(head, x)); ++tries) x = pick(rng);
  return x;
}

inline GatResult gat_pretrain(const ConceptGraph& graph, const GatConfig& cfg,
                              const std::vector<GraphEdge>* train_edges = nullptr) {
  if (graph.empty()) throw Error("cannot pretrain on an empty graph");
  const auto& edges = train_edges ? *train_edges : graph.edges();
  GatEncoder enc(graph, cfg);
  AdamState state;
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  GatResult out;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto rng = derived_rng(cfg.seed, {0x6a7, epoch});
    std::vector<std::size_t> order(edges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    if (order.size() > cfg.edges_per_step) order.resize(cfg.edges_per_step);

    enc.params().zero_grad();
    Tape tape;
    auto h = enc.forward(tape);
    std::vector<Tensor> terms;
    for (auto e : order) {
      const auto& edge = edges[e];
      auto pos = link_score(tape, h, edge.head, edge.tail);
      auto neg = link_score(tape, h, edge.head, sample_negative(graph, edge.head, rng));
      terms.push_back(tape.add(tape.log_sigmoid(pos), tape.log_sigmoid(tape.scale(neg, -1.0))));
    }
    if (terms.empty()) break;
    auto loss = tape.scale(tape.sum(tape.concat(terms)), -1.0 / double(terms.size()));
    const double value = loss.item();
    if (!std::isfinite(value))
      throw NumericError("graph pretraining diverged at epoch " + std::to_string(epoch));
    out.loss_history.push_back(value);
    tape.backward(loss);
    try {
      adam_step(enc.params(), state, adam);
    } catch (const NumericError& e) {
      throw NumericError("graph pretraining diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }
  Tape inference(Tape::Mode::kInference);
  out.embeddings = enc.forward(inference).detach();
  return out;
}

inline void store_embeddings(Container& c, const Tensor& embeddings, const std::string& name = "graph/embeddings") {
  c.put(name, embeddings);
}

}  // namespace mwpgen

#pragma once

// Path vectors over a two-hop concept neighbourhood and attention pooling
// of those vectors into a single knowledge vector.

#include <vector>

#include "mwpgen/graph.hpp"
#include "mwpgen/tensor.hpp"

namespace mwpgen {

struct PathParams {
  Tensor w_path;  // [2*dg, d]
  Tensor b_path;  // [d]
  Tensor u_hop;   // [d, d]
  Tensor w_attn;  // [dg, d]
  double alpha = 0.7;
};

// tanh([e_i; e_j] W + b)
inline Tensor path_repr(Tape& tape, const Tensor& e_i, const Tensor& e_j, const PathParams& p) {
  if (e_i.size() != e_j.size()) throw ShapeError("path_repr: endpoint dimensions differ");
  return tape.tanh(tape.add_bias(tape.matmul(tape.concat({e_i, e_j}), p.w_path), p.b_path));
}

// alpha * path_repr(e_i, e_j) + (1 - alpha) * sigmoid(e_ik * (e_kj U))
inline Tensor two_hop_repr(Tape& tape, const Tensor& e_ik, const Tensor& e_kj, const Tensor& e_i,
                           const Tensor& e_j, double alpha, const PathParams& p) {
  if (e_ik.size() != e_kj.size()) throw ShapeError("two_hop_repr: segment dimensions differ");
  if (alpha < 0.0 || alpha > 1.0) throw Error("two_hop_repr: alpha outside [0, 1]");
  auto direct = path_repr(tape, e_i, e_j, p);
  if (alpha == 1.0) return direct;
  auto chained = tape.sigmoid(tape.mul(e_ik, tape.matmul(e_kj, p.u_hop)));
  return tape.add(tape.scale(direct, alpha), tape.scale(chained, 1.0 - alpha));
}

// Constant inputs for one bundle, gathered once from frozen node embeddings.
struct PathInputs {
  std::size_t first = 0;
  std::size_t second = 0;
  Tensor source;       // [dg]
  Tensor first_pairs;  // [first, 2*dg]  rows [e_s; e_k]
  Tensor skip_pairs;   // [second, 2*dg] rows [e_s; e_j]
  Tensor hop_pairs;    // [second, 2*dg] rows [e_k; e_j]
  std::vector<std::size_t> via_row;  // first-hop row of each second-hop via node

  bool empty() const { return first + second == 0; }
};

inline PathInputs path_inputs(const PathBundle& bundle, const Tensor& node_embeddings) {
  PathInputs in;
  if (!bundle.source || bundle.empty()) return in;
  const std::size_t dg = node_embeddings.cols();
  auto emb = [&](std::size_t id) { return node_embeddings.values().subspan(id * dg, dg); };
  auto pairs = [&](const std::vector<std::pair<std::size_t, std::size_t>>& rows) {
    std::vector<double> v;
    v.reserve(rows.size() * 2 * dg);
    for (auto [a, b] : rows) {
      auto x = emb(a), y = emb(b);
      v.insert(v.end(), x.begin(), x.end());
      v.insert(v.end(), y.begin(), y.end());
    }
    return Tensor::matrix(rows.size(), 2 * dg, std::move(v));
  };
  const std::size_t s = *bundle.source;
  in.first = bundle.first_hop.size();
  in.second = bundle.second_hop.size();
  auto src = emb(s);
  in.source = Tensor::vector({src.begin(), src.end()});
  std::vector<std::pair<std::size_t, std::size_t>> first, skip, hop;
  for (auto k : bundle.first_hop) first.push_back({s, k});
  for (const auto& h : bundle.second_hop) {
    skip.push_back({s, h.node});
    hop.push_back({h.via, h.node});
    auto it = std::lower_bound(bundle.first_hop.begin(), bundle.first_hop.end(), h.via);
    if (it == bundle.first_hop.end() || *it != h.via) throw Error("second-hop via node is not a first-hop node");
    in.via_row.push_back(std::size_t(it - bundle.first_hop.begin()));
  }
  if (in.first) in.first_pairs = pairs(first);
  if (in.second) {
    in.skip_pairs = pairs(skip);
    in.hop_pairs = pairs(hop);
  }
  return in;
}

// Path vectors of every bundle entry, first hop rows then second hop rows.
// Second-hop rows use the first-hop path vector of their via node as e_ik.
inline Tensor bundle_path_vectors(Tape& tape, const PathInputs& in, const PathParams& p) {
  auto project = [&](const Tensor& m) { return tape.tanh(tape.add_bias(tape.matmul(m, p.w_path), p.b_path)); };
  auto first = project(in.first_pairs);
  if (in.second == 0) return first;
  auto direct = project(in.skip_pairs);
  auto chained = tape.sigmoid(
      tape.mul(tape.gather_rows(first, in.via_row), tape.matmul(project(in.hop_pairs), p.u_hop)));
  auto second = tape.add(tape.scale(direct, p.alpha), tape.scale(chained, 1.0 - p.alpha));
  return tape.concat_rows({first, second});
}

struct Aggregate {
  Tensor g;       // [d]
  Tensor weights;  // attention over bundle entries; undefined when empty
  bool empty = false;
};

// beta = softmax(P (e_s W_b)), g = beta P.
inline Aggregate aggregate_paths(Tape& tape, const Tensor& e_source, const Tensor& path_vectors,
                                 const PathParams& p) {
  Aggregate out;
  if (!path_vectors.defined() || path_vectors.rows() == 0 || path_vectors.size() == 0) {
    out.g = Tensor::zeros({p.w_path.cols()});
    out.empty = true;
    return out;
  }
  out.weights = tape.softmax(tape.matmul(path_vectors, tape.matmul(e_source, p.w_attn)));
  out.g = tape.matmul(out.weights, path_vectors);
  return out;
}

inline Aggregate aggregate_paths(Tape& tape, const PathInputs& in, const PathParams& p) {
  if (in.empty()) return aggregate_paths(tape, in.source, Tensor(), p);
  return aggregate_paths(tape, in.source, bundle_path_vectors(tape, in, p), p);
}

}  // namespace mwpgen

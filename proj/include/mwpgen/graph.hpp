#pragma once

// ConceptNet-style knowledge graph: loading, adjacency and two-hop
// neighbourhoods.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mwpgen/container.hpp"

namespace mwpgen {

inline const std::vector<std::string>& conceptnet_relations() {
  static const std::vector<std::string> r = {
      "RelatedTo", "FormOf", "IsA", "PartOf", "HasA", "UsedFor", "CapableOf", "AtLocation",
      "Causes", "HasSubevent", "HasFirstSubevent", "HasLastSubevent", "HasPrerequisite",
      "HasProperty", "MotivatedByGoal", "ObstructedBy", "Desires", "CreatedBy", "Synonym",
      "Antonym", "DistinctFrom", "DerivedFrom", "SymbolOf", "DefinedAs", "MannerOf", "LocatedNear",
      "HasContext", "SimilarTo", "EtymologicallyRelatedTo", "EtymologicallyDerivedFrom",
      "CausesDesire", "MadeOf", "ReceivesAction", "ExternalURL"};
  return r;
}

// "/c/en/ice_cream/n" -> "ice_cream"; plain names are lowercased.
inline std::string concept_name(std::string_view raw) {
  std::string s(raw);
  if (s.rfind("/c/", 0) == 0) {
    auto parts = std::vector<std::string>{};
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, '/');) parts.push_back(p);
    s = parts.size() > 3 ? parts[3] : "";
  }
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string relation_name(std::string_view raw) {
  std::string s(raw);
  if (s.rfind("/r/", 0) == 0) s = s.substr(3);
  return s;
}

struct GraphEdge {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;
  double weight = 1.0;
};

struct Neighbor {
  std::size_t node = 0;
  std::size_t relation = 0;  // relation of the heaviest edge joining the pair
  double weight = 0.0;
};

class ConceptGraph {
 public:
  ConceptGraph() : relations_(conceptnet_relations()) {
    for (std::size_t i = 0; i < relations_.size(); ++i) relation_index_[relations_[i]] = i;
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }
  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  const std::vector<std::string>& relations() const { return relations_; }
  const std::string& node_name(std::size_t id) const { return nodes_.at(id); }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = node_index_.find(std::string(name));
    if (it == node_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> find_relation(std::string_view name) const {
    auto it = relation_index_.find(std::string(name));
    if (it == relation_index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t add_node(const std::string& name) {
    auto [it, fresh] = node_index_.emplace(name, nodes_.size());
    if (fresh) {
      nodes_.push_back(name);
      adjacency_.emplace_back();
    }
    return it->second;
  }

  std::size_t add_relation(const std::string& name) {
    auto [it, fresh] = relation_index_.emplace(name, relations_.size());
    if (fresh) relations_.push_back(name);
    return it->second;
  }

  // Returns false for a duplicate (head, relation, tail).
  bool add_edge(std::size_t head, std::size_t relation, std::size_t tail, double weight = 1.0) {
    if (head >= nodes_.size() || tail >= nodes_.size() || relation >= relations_.size())
      throw Error("edge endpoint out of range");
    if (!edge_keys_.insert({head, relation, tail}).second) return false;
    edges_.push_back({head, relation, tail, weight});
    if (head != tail) {
      link(head, tail, relation, weight);
      link(tail, head, relation, weight);
    }
    return true;
  }

  // Undirected neighbours, ascending by node id.
  const std::vector<Neighbor>& neighbors(std::size_t node) const { return adjacency_.at(node); }

  bool adjacent(std::size_t a, std::size_t b) const {
    const auto& n = adjacency_.at(a);
    auto it = std::lower_bound(n.begin(), n.end(), b,
                               [](const Neighbor& x, std::size_t id) { return x.node < id; });
    return it != n.end() && it->node == b;
  }

  std::string serialize_nodes() const {
    std::string s;
    for (std::size_t i = 0; i < nodes_.size(); ++i) s += (i ? "\n" : "") + nodes_[i];
    return s;
  }
  std::string serialize_relations() const {
    std::string s;
    for (std::size_t i = 0; i < relations_.size(); ++i) s += (i ? "\n" : "") + relations_[i];
    return s;
  }

 private:
  void link(std::size_t from, std::size_t to, std::size_t relation, double weight) {
    auto& n = adjacency_[from];
    auto it = std::lower_bound(n.begin(), n.end(), to,
                               [](const Neighbor& x, std::size_t id) { return x.node < id; });
    if (it != n.end() && it->node == to) {
      if (weight > it->weight) it->weight = weight, it->relation = relation;
      return;
    }
    n.insert(it, {to, relation, weight});
  }

  std::vector<std::string> nodes_;
  std::unordered_map<std::string, std::size_t> node_index_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, std::size_t> relation_index_;
  std::vector<GraphEdge> edges_;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> edge_keys_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

struct GraphLoadOptions {
  // Keep only rows touching one of these words (empty keeps everything).
  std::set<std::string> vocabulary;
  // Unknown relations extend the relation vocabulary instead of being rejected.
  bool grow_relations = false;
};

struct GraphLoadReport {
  std::size_t rows = 0;
  std::size_t edges = 0;
  std::size_t duplicates = 0;
  std::size_t malformed = 0;
  std::size_t unknown_relation = 0;
  std::size_t out_of_vocabulary = 0;
};

// TSV rows: head <TAB> relation <TAB> tail <TAB> weight.
inline ConceptGraph load_graph(std::istream& in, const GraphLoadOptions& opt = {},
                               GraphLoadReport* report = nullptr) {
  GraphLoadReport rep;
  ConceptGraph g;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    ++rep.rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, '\t');) f.push_back(cell);
    double weight = 1.0;
    if (f.size() != 4) {
      ++rep.malformed;
      continue;
    }
    try {
      std::size_t used = 0;
      weight = std::stod(f[3], &used);
      if (used != f[3].size() || !(weight >= 0)) throw std::invalid_argument("weight");
    } catch (const std::exception&) {
      ++rep.malformed;
      continue;
    }
    const auto head = concept_name(f[0]), tail = concept_name(f[2]);
    const auto rel = relation_name(f[1]);
    if (head.empty() || tail.empty() || rel.empty()) {
      ++rep.malformed;
      continue;
    }
    auto r = g.find_relation(rel);
    if (!r) {
      if (!opt.grow_relations) {
        ++rep.unknown_relation;
        continue;
      }
      r = g.add_relation(rel);
    }
    if (!opt.vocabulary.empty() && !opt.vocabulary.count(head) && !opt.vocabulary.count(tail)) {
      ++rep.out_of_vocabulary;
      continue;
    }
    const auto h = g.add_node(head), t = g.add_node(tail);
    if (g.add_edge(h, *r, t, weight))
      ++rep.edges;
    else
      ++rep.duplicates;
  }
  if (report) *report = rep;
  if (g.empty()) throw Error("knowledge graph is empty after loading");
  return g;
}

inline ConceptGraph load_graph(const std::string& path, const GraphLoadOptions& opt = {},
                               GraphLoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return load_graph(in, opt, report);
}

// Graph structure as container entries (node names, relation names, edges).
inline void store_graph(Container& c, const ConceptGraph& g, const std::string& prefix = "graph/") {
  c.strings[prefix + "nodes"] = g.serialize_nodes();
  c.strings[prefix + "relations"] = g.serialize_relations();
  std::vector<std::int64_t> e;
  std::vector<double> w;
  for (const auto& x : g.edges()) {
    e.insert(e.end(), {std::int64_t(x.head), std::int64_t(x.relation), std::int64_t(x.tail)});
    w.push_back(x.weight);
  }
  c.integers[prefix + "edges"] = std::move(e);
  c.tensors[prefix + "weights"] = {{w.size()}, std::move(w)};
}

inline ConceptGraph restore_graph(const Container& c, const std::string& prefix = "graph/") {
  ConceptGraph g;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t b = 0;
    while (b <= s.size()) {
      auto e = s.find('\n', b);
      if (e == std::string::npos) e = s.size();
      out.push_back(s.substr(b, e - b));
      b = e + 1;
    }
    return out;
  };
  for (const auto& r : split(c.str(prefix + "relations"))) g.add_relation(r);
  for (const auto& n : split(c.str(prefix + "nodes"))) g.add_node(n);
  const auto& e = c.ints(prefix + "edges");
  const auto w = c.tensor(prefix + "weights");
  if (e.size() != 3 * w.size()) throw FormatError("graph edge table is inconsistent");
  for (std::size_t i = 0; i < w.size(); ++i)
    g.add_edge(std::size_t(e[3 * i]), std::size_t(e[3 * i + 1]), std::size_t(e[3 * i + 2]), w[i]);
  return g;
}

struct PathBundle {
  struct SecondHop {
    std::size_t node;
    std::size_t via;
  };
  std::optional<std::size_t> source;
  std::vector<std::size_t> first_hop;   // ascending node id
  std::vector<SecondHop> second_hop;    // ascending node id

  bool empty() const { return first_hop.empty() && second_hop.empty(); }
  std::size_t size() const { return first_hop.size() + second_hop.size(); }
};

struct NeighborCaps {
  std::size_t first_hop = 32;
  std::size_t second_hop = 64;
};

// Direct neighbours plus nodes exactly two undirected hops away. The via
// node of a second-hop entry is the lowest-id kept first-hop node adjacent to
// it. When caps bite, the heaviest edges (by path weight product) are kept.
inline PathBundle bfs_two_hop(const ConceptGraph& g, std::size_t source, NeighborCaps caps = {}) {
  PathBundle b;
  b.source = source;
  const auto& direct = g.neighbors(source);
  std::vector<Neighbor> first(direct.begin(), direct.end());
  std::stable_sort(first.begin(), first.end(),
                   [](const Neighbor& x, const Neighbor& y) { return x.weight > y.weight; });
  if (first.size() > caps.first_hop) first.resize(caps.first_hop);
  std::sort(first.begin(), first.end(),
            [](const Neighbor& x, const Neighbor& y) { return x.node < y.node; });
  for (const auto& n : first) b.first_hop.push_back(n.node);

  struct Candidate {
    std::size_t node, via;
    double weight;
  };
  std::map<std::size_t, Candidate> second;
  for (const auto& k : first) {
    for (const auto& j : g.neighbors(k.node)) {
      if (j.node == source || g.adjacent(source, j.node)) continue;
      second.emplace(j.node, Candidate{j.node, k.node, k.weight * j.weight});
    }
  }
  std::vector<Candidate> ranked;
  for (auto& [_, c] : second) ranked.push_back(c);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Candidate& x, const Candidate& y) { return x.weight > y.weight; });
  if (ranked.size() > caps.second_hop) ranked.resize(caps.second_hop);
  std::sort(ranked.begin(), ranked.end(),
            [](const Candidate& x, const Candidate& y) { return x.node < y.node; });
  for (const auto& c : ranked) b.second_hop.push_back({c.node, c.via});
  return b;
}

inline PathBundle bfs_two_hop(const ConceptGraph& g, std::string_view word, NeighborCaps caps = {}) {
  if (auto id = g.find(word)) return bfs_two_hop(g, *id, caps);
  return {};
}

}  // namespace mwpgen

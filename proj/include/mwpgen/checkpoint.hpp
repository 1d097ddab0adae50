#pragma once

// Model snapshots: configuration, vocabularies, parameters, topic memory,
// knowledge graph and node embeddings, plus optional optimizer and loop state
// for resuming.

#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "mwpgen/container.hpp"
#include "mwpgen/graph.hpp"
#include "mwpgen/model.hpp"
#include "mwpgen/optim.hpp"

namespace mwpgen {

inline constexpr std::string_view kCheckpointKind = "mwpgen-checkpoint";

struct TrainProgress {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;  // next batch index within `epoch`
  double best_dev_bleu = -1.0;
  std::size_t best_step = 0;
};

inline Container make_checkpoint(const Model& model, const AdamState* adam = nullptr,
                                 const TrainProgress* progress = nullptr, const nlohmann::json& train_config = {}) {
  Container c;
  c.kind = std::string(kCheckpointKind);
  c.strings["model/config"] = model.config().to_json().dump();
  c.strings["vocab/equation"] = model.equation_vocab().serialize();
  c.strings["vocab/problem"] = model.vocab().serialize();
  c.integers["vocab/sizes"] = {std::int64_t(model.equation_vocab().size()), std::int64_t(model.vocab().size())};
  model.params().store(c);
  c.put("model/memory", model.memory());
  if (model.graph()) {
    store_graph(c, *model.graph());
    c.put("graph/embeddings", model.node_embeddings());
  }
  if (adam) adam->store(c);
  if (progress) {
    c.integers["train/progress"] = {std::int64_t(progress->step), std::int64_t(progress->epoch),
                                    std::int64_t(progress->batch), std::int64_t(progress->best_step)};
    c.put("train/best_dev_bleu", Tensor::vector({progress->best_dev_bleu}));
  }
  if (!train_config.is_null()) c.strings["train/config"] = train_config.dump();
  return c;
}

inline void check_checkpoint(const Container& c) {
  if (c.kind != kCheckpointKind) throw FormatError("not a model checkpoint (kind '" + c.kind + "')");
}

inline std::unique_ptr<Model> load_model(const Container& c) {
  check_checkpoint(c);
  auto cfg = ModelConfig::from_json(nlohmann::json::parse(c.str("model/config")));
  auto eq = Vocabulary::deserialize(c.str("vocab/equation"));
  auto vocab = Vocabulary::deserialize(c.str("vocab/problem"));
  const auto& sizes = c.ints("vocab/sizes");
  if (sizes.size() != 2 || std::size_t(sizes[0]) != eq.size() || std::size_t(sizes[1]) != vocab.size())
    throw FormatError("checkpoint vocabulary sizes disagree");
  std::shared_ptr<const ConceptGraph> graph;
  Tensor nodes;
  if (c.strings.count("graph/nodes")) {
    graph = std::make_shared<ConceptGraph>(restore_graph(c));
    nodes = c.tensor("graph/embeddings");
  }
  return std::make_unique<Model>(cfg, std::move(eq), std::move(vocab), c.tensor("model/memory"), graph, nodes, c);
}

inline std::unique_ptr<Model> load_model(const std::string& path) { return load_model(Container::load(path)); }

inline std::optional<TrainProgress> load_progress(const Container& c) {
  if (!c.integers.count("train/progress")) return std::nullopt;
  const auto& v = c.ints("train/progress");
  if (v.size() != 4) throw FormatError("malformed training progress record");
  TrainProgress p;
  p.step = std::size_t(v[0]);
  p.epoch = std::size_t(v[1]);
  p.batch = std::size_t(v[2]);
  p.best_step = std::size_t(v[3]);
  p.best_dev_bleu = c.tensor("train/best_dev_bleu")[0];
  return p;
}

}  // namespace mwpgen

#pragma once

// Training loop (shuffled mini-batches, Adam, KL warmup, best-dev checkpoint,
// resume) and the generation driver.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mwpgen/checkpoint.hpp"
#include "mwpgen/dataset.hpp"
#include "mwpgen/lda.hpp"
#include "mwpgen/metrics.hpp"
#include "mwpgen/model.hpp"
#include "mwpgen/optim.hpp"
#include "mwpgen/rng.hpp"

namespace mwpgen {

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  std::size_t epochs = 30;
  std::size_t warmup = 2000;  // KL weight ramps linearly to 1 over this many steps
  double topic_weight = 0.5;
  double mask_rate = 0.15;
  double delete_rate = 0.10;
  std::size_t max_steps = 0;  // 0: no limit beyond epochs
  std::size_t dev_limit = 200;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size == 0) throw Error("batch_size must be at least 1");
    if (!(learning_rate > 0)) throw Error("learning_rate must be positive");
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw Error("adam betas must lie in (0,1)");
    if (!(epsilon > 0)) throw Error("epsilon must be positive");
    if (topic_weight < 0) throw Error("topic_weight must be nonnegative");
    if (mask_rate < 0 || mask_rate >= 1 || delete_rate < 0 || delete_rate >= 1)
      throw Error("corruption rates must lie in [0,1)");
  }

  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon, clip_norm}; }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size}, {"learning_rate", learning_rate}, {"beta1", beta1},
            {"beta2", beta2},           {"epsilon", epsilon},             {"clip_norm", clip_norm},
            {"epochs", epochs},         {"warmup", warmup},               {"topic_weight", topic_weight},
            {"mask_rate", mask_rate},   {"delete_rate", delete_rate},     {"max_steps", max_steps},
            {"dev_limit", dev_limit},   {"seed", seed}};
  }
};

struct StepLog {
  std::size_t step = 0;
  double nll = 0.0;  // per token
  double kl = 0.0;
  double topic_ce = 0.0;
  double anneal_weight = 0.0;
  double grad_norm = 0.0;
};

inline std::string loss_csv_header() { return "step,nll,kl,topic_ce,anneal_weight"; }

inline std::string loss_csv_row(const StepLog& s) {
  std::ostringstream os;
  os << std::setprecision(17) << s.step << ',' << s.nll << ',' << s.kl << ',' << s.topic_ce << ','
     << s.anneal_weight;
  return os.str();
}

// Vocabularies from the training split, topic memory from LDA keywords.
inline std::unique_ptr<Model> build_model(const ModelConfig& cfg, const std::vector<TrainingExample>& train,
                                          const std::vector<std::vector<std::string>>& topic_keywords,
                                          std::shared_ptr<const ConceptGraph> graph, Tensor node_embeddings,
                                          std::size_t min_freq = 2) {
  if (train.empty()) throw DataError("training set is empty");
  std::vector<std::vector<std::string>> eq, text;
  for (const auto& ex : train) {
    std::vector<std::string> toks;
    for (const auto& t : ex.equations.tokens) toks.push_back(t.surface);
    eq.push_back(std::move(toks));
    text.push_back(ex.problem);
  }
  return std::make_unique<Model>(cfg, build_vocab(eq, 1), build_vocab(text, min_freq), topic_keywords,
                                 std::move(graph), std::move(node_embeddings));
}

inline std::vector<std::vector<std::string>> lda_keywords(const LdaModel& lda, std::size_t k) {
  std::vector<std::vector<std::string>> out;
  for (std::size_t t = 1; t <= lda.num_topics; ++t) out.push_back(top_keywords(lda, int(t), k));
  return out;
}

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg, std::vector<TrainingExample> train, std::vector<TrainingExample> dev = {})
      : model_(model), cfg_(std::move(cfg)), train_(std::move(train)), dev_(std::move(dev)) {
    cfg_.validate();
    if (train_.empty()) throw DataError("training set is empty");
    for (const auto& ex : train_) prepared_.push_back(model_.prepare(ex));
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  const TrainProgress& progress() const { return progress_; }
  const AdamState& adam_state() const { return adam_; }
  std::size_t batches_per_epoch() const { return (prepared_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }
  bool finished() const {
    return progress_.epoch >= cfg_.epochs || (cfg_.max_steps && progress_.step >= cfg_.max_steps);
  }

  void resume(const Container& c) {
    auto p = load_progress(c);
    if (!p) throw FormatError("checkpoint carries no training progress");
    auto saved = nlohmann::json::parse(c.str("model/config")), current = model_.config().to_json();
    saved.erase("seed"), current.erase("seed");
    if (saved != current) throw ShapeError("checkpoint model configuration does not match the current model");
    if (c.str("vocab/problem") != model_.vocab().serialize() ||
        c.str("vocab/equation") != model_.equation_vocab().serialize())
      throw ShapeError("checkpoint vocabularies do not match the current model");
    model_.params().load(c);
    model_.set_memory(c.tensor("model/memory"));
    adam_ = AdamState::load(c);
    progress_ = *p;
  }

  // Example order for an epoch; a pure function of the seed and epoch.
  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(prepared_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = derived_rng(cfg_.seed, {0x5eed, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  // One optimizer step on the next batch. Each example is back-propagated on
  // its own tape with weight 1/B, so peak memory is one example's graph.
  StepLog step() {
    const auto order = epoch_order(progress_.epoch);
    const std::size_t begin = progress_.batch * cfg_.batch_size;
    const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
    const double b = double(end - begin);

    LossOptions opt;
    opt.anneal_weight = kl_anneal_weight(progress_.step, cfg_.warmup);
    opt.topic_weight = cfg_.topic_weight;
    opt.mask_rate = cfg_.mask_rate;
    opt.delete_rate = cfg_.delete_rate;

    StepLog log;
    log.step = progress_.step;
    log.anneal_weight = opt.anneal_weight;
    std::size_t tokens = 0;
    model_.params().zero_grad();
    for (std::size_t i = begin; i < end; ++i) {
      auto rng = derived_rng(cfg_.seed, {0x57e9, progress_.step, i - begin});
      Tape tape;
      auto terms = model_.example_loss(tape, prepared_[order[i]], opt, rng);
      tape.backward(tape.scale(terms.total, 1.0 / b));
      log.nll += terms.nll;
      log.kl += terms.kl / b;
      log.topic_ce += terms.topic_ce / b;
      tokens += terms.tokens;
    }
    log.nll /= double(std::max<std::size_t>(tokens, 1));
    try {
      log.grad_norm = adam_step(model_.params(), adam_, cfg_.adam());
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(progress_.step) + ": " + e.what());
    }
    ++progress_.step;
    if (++progress_.batch >= batches_per_epoch()) {
      progress_.batch = 0;
      ++progress_.epoch;
    }
    return log;
  }

  double dev_bleu() const {
    if (dev_.empty()) return 0.0;
    std::vector<Tokens> cand, ref;
    const std::size_t n = cfg_.dev_limit ? std::min(cfg_.dev_limit, dev_.size()) : dev_.size();
    for (std::size_t i = 0; i < n; ++i) {
      cand.push_back(model_.generate(dev_[i].equations).tokens);
      ref.push_back(dev_[i].problem);
    }
    return bleu2(cand, ref);
  }

  Container checkpoint() const { return make_checkpoint(model_, &adam_, &progress_, cfg_.to_json()); }

  struct Hooks {
    std::function<void(const StepLog&)> on_step;
    std::function<void(std::size_t epoch, double bleu, bool improved)> on_epoch;
    std::function<void(const Container&)> on_best;
    std::function<void(const Container&)> on_epoch_end;
  };

  // Runs until the configured epochs (or max_steps) are done. At the end of
  // every epoch the dev BLEU-2 is measured and the best snapshot reported;
  // without a dev set the latest epoch counts as the best.
  void run(const Hooks& hooks = {}) {
    while (!finished()) {
      const auto epoch = progress_.epoch;
      auto log = step();
      if (hooks.on_step) hooks.on_step(log);
      if (progress_.epoch != epoch || finished()) {
        const double bleu = dev_bleu();
        const bool improved = dev_.empty() || bleu > progress_.best_dev_bleu;
        if (improved) {
          progress_.best_dev_bleu = bleu;
          progress_.best_step = progress_.step;
          if (hooks.on_best) hooks.on_best(checkpoint());
        }
        if (hooks.on_epoch) hooks.on_epoch(epoch, bleu, improved);
        if (hooks.on_epoch_end) hooks.on_epoch_end(checkpoint());
      }
    }
  }

 private:
  Model& model_;
  TrainConfig cfg_;
  std::vector<TrainingExample> train_;
  std::vector<TrainingExample> dev_;
  std::vector<PreparedExample> prepared_;
  AdamState adam_;
  TrainProgress progress_;
};

// ---- generation driver ----------------------------------------------------------

struct GeneratedProblem {
  std::string id;
  std::vector<std::string> equations;
  std::string text;
  Generation generation;

  nlohmann::json to_json(bool with_copies = false) const {
    nlohmann::json j = {{"id", id}, {"equations", equations}, {"generated", text}};
    if (with_copies) {
      auto c = nlohmann::json::array();
      for (const auto& e : generation.copies)
        c.push_back({{"step", e.step},
                     {"surface", e.surface},
                     {"position", e.position},
                     {"copy_mass", e.copy_mass},
                     {"generate_mass", e.generate_mass}});
      j["copies"] = c;
      j["topic"] = generation.topic_id;
    }
    return j;
  }
};

struct EquationInput {
  std::string id;
  std::vector<std::string> equations;
};

// Same variable normalization and tokenization as training data.
inline GeneratedProblem generate_problem(const Model& model, const EquationInput& in, const DecodeOptions& opt = {}) {
  GeneratedProblem g;
  g.id = in.id;
  g.equations = normalize_variables(in.equations);
  g.generation = model.generate(tokenize_equations(g.equations), opt);
  g.text = join_tokens(g.generation.tokens);
  return g;
}

// JSON lines: {"id", "equations": [...]} (a "problem" field, if present, is ignored).
inline std::vector<EquationInput> read_equation_inputs(std::istream& in) {
  std::vector<EquationInput> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      EquationInput e;
      e.id = j.contains("id") ? j.at("id").get<std::string>() : std::to_string(n);
      e.equations = j.at("equations").get<std::vector<std::string>>();
      if (e.equations.empty()) throw DataError("no equations");
      out.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw DataError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mwpgen

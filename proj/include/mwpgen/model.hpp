#pragma once

// Equation-to-problem generator: template-aware equation encoder, problem
// encoder, Gaussian latents, topic memory, knowledge-path input enrichment
// and a GRU decoder with a number-copy pointer.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mwpgen/dataset.hpp"
#include "mwpgen/equation.hpp"
#include "mwpgen/graph.hpp"
#include "mwpgen/parameters.hpp"
#include "mwpgen/paths.hpp"
#include "mwpgen/tensor.hpp"
#include "mwpgen/text.hpp"

namespace mwpgen {

struct ModelConfig {
  std::size_t dim = 256;
  std::size_t topics = 9;
  std::size_t keywords = 30;
  std::vector<std::size_t> kernel_widths = {2, 3, 4};
  double alpha = 0.7;
  std::size_t max_decode_length = 50;
  std::size_t first_hop_cap = 32;
  std::size_t second_hop_cap = 64;
  bool use_copy = true;
  bool use_topic_memory = true;
  bool use_commonsense = true;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const {
    return {{"dim", dim},
            {"topics", topics},
            {"keywords", keywords},
            {"kernel_widths", kernel_widths},
            {"alpha", alpha},
            {"max_decode_length", max_decode_length},
            {"first_hop_cap", first_hop_cap},
            {"second_hop_cap", second_hop_cap},
            {"use_copy", use_copy},
            {"use_topic_memory", use_topic_memory},
            {"use_commonsense", use_commonsense},
            {"seed", seed}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.dim = j.at("dim");
    c.topics = j.at("topics");
    c.keywords = j.at("keywords");
    c.kernel_widths = j.at("kernel_widths").get<std::vector<std::size_t>>();
    c.alpha = j.at("alpha");
    c.max_decode_length = j.at("max_decode_length");
    c.first_hop_cap = j.at("first_hop_cap");
    c.second_hop_cap = j.at("second_hop_cap");
    c.use_copy = j.at("use_copy");
    c.use_topic_memory = j.at("use_topic_memory");
    c.use_commonsense = j.at("use_commonsense");
    c.seed = j.at("seed");
    return c;
  }
};

struct EncoderOutput {
  Tensor states;          // fused h_1..h_n, [n, d]
  Tensor last;            // h_n
  Tensor token_stream;    // [n, d]
  Tensor template_stream;  // [n, d]
};

struct LatentState {
  Tensor mu;
  Tensor log_sigma;
  Tensor z;
  bool prior = false;

  // Fixed distribution for analysis and tests; sigma must be positive.
  static LatentState from_moments(std::vector<double> mu, const std::vector<double>& sigma) {
    if (mu.size() != sigma.size()) throw ShapeError("mean and sigma sizes differ");
    std::vector<double> ls;
    for (double s : sigma) {
      if (!(s > 0.0)) throw NumericError("sigma must be positive");
      ls.push_back(std::log(s));
    }
    LatentState st;
    st.mu = Tensor::vector(std::move(mu));
    st.log_sigma = Tensor::vector(std::move(ls));
    st.z = st.mu;
    return st;
  }
};

struct ProblemEncoding {
  Tensor q;
  LatentState prior;
};

// Where equation numbers can be copied to: each number position maps to an
// output id, either a vocabulary id or an extra slot after the vocabulary.
struct CopySource {
  std::vector<std::size_t> positions;
  std::vector<std::size_t> targets;
  std::vector<std::string> slot_surfaces;  // surfaces of the extra slots
  std::size_t output_size = 0;

  bool empty() const { return positions.empty(); }
};

struct DecoderState {
  Tensor s;
  Tensor context;
  Tensor memory;  // working copy of one topic row, [K, d]
  std::size_t t = 0;
  std::size_t prev = Vocabulary::kBos;  // output id
  std::vector<std::size_t> prefix;
};

struct StepOutput {
  Tensor probs;      // over vocabulary plus copy slots
  Tensor log_probs;  // set when no mixing happens
  Tensor p_gen;      // one element; undefined when copying is off
  Tensor attention;  // over encoder positions
  Tensor copy;       // over number positions
  Tensor topic_scores;
};

struct TopicAttention {
  Tensor f;
  Tensor scores;
};

struct PreparedExample {
  const TrainingExample* source = nullptr;
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> template_ids;
  std::vector<std::size_t> kind_ids;
  CopySource copy;
  std::vector<std::size_t> targets;  // output ids, EOS last
};

struct LossTerms {
  Tensor total;
  double nll = 0.0;  // summed over tokens
  double kl = 0.0;
  double topic_ce = 0.0;
  std::size_t tokens = 0;
};

struct LossOptions {
  double anneal_weight = 1.0;
  double topic_weight = 0.5;
  double mask_rate = 0.15;
  double delete_rate = 0.10;
  bool sample_latent = true;
};

struct CopyEvent {
  std::size_t step = 0;
  std::string surface;
  std::size_t position = 0;  // equation token index with the most copy mass
  double copy_mass = 0.0;
  double generate_mass = 0.0;
};

struct Generation {
  std::vector<std::string> tokens;
  std::vector<CopyEvent> copies;
  int topic_id = 1;
};

struct DecodeOptions {
  std::size_t beam_width = 1;
  bool sample_latent = false;
  std::uint64_t seed = 1;
  std::size_t max_length = 0;  // 0 uses the model setting
};

class Model {
 public:
  Model(ModelConfig cfg, Vocabulary equation_vocab, Vocabulary vocab,
        const std::vector<std::vector<std::string>>& topic_keywords,
        std::shared_ptr<const ConceptGraph> graph = nullptr, Tensor node_embeddings = Tensor())
      : cfg_(std::move(cfg)),
        eq_vocab_(std::move(equation_vocab)),
        vocab_(std::move(vocab)),
        graph_(std::move(graph)),
        nodes_(std::move(node_embeddings)) {
    if (cfg_.dim == 0 || cfg_.topics == 0 || cfg_.keywords == 0) throw Error("model dimensions must be positive");
    if (cfg_.kernel_widths.empty()) throw Error("problem encoder needs at least one kernel width");
    if (graph_ && (!nodes_.defined() || nodes_.rows() != graph_->node_count()))
      throw ShapeError("node embedding table does not match the graph");
    init_parameters();
    build_memory(topic_keywords);
    build_paths();
  }

  // Restores a model whose parameters and memory come from a checkpoint.
  Model(ModelConfig cfg, Vocabulary equation_vocab, Vocabulary vocab, Tensor memory,
        std::shared_ptr<const ConceptGraph> graph, Tensor node_embeddings, const Container& snapshot)
      : cfg_(std::move(cfg)),
        eq_vocab_(std::move(equation_vocab)),
        vocab_(std::move(vocab)),
        graph_(std::move(graph)),
        nodes_(std::move(node_embeddings)) {
    init_parameters();
    params_.load(snapshot);
    if (memory.rows() != cfg_.topics * cfg_.keywords || memory.cols() != cfg_.dim)
      throw ShapeError("topic memory shape does not match the configuration");
    memory_ = memory.detach();
    build_paths();
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const Vocabulary& equation_vocab() const { return eq_vocab_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const Tensor& memory() const { return memory_; }
  void set_memory(const Tensor& m) {
    if (m.rank() != 2 || m.rows() != memory_.rows() || m.cols() != memory_.cols())
      throw ShapeError("topic memory shape does not match the configuration");
    memory_ = m.detach();
  }
  const std::shared_ptr<const ConceptGraph>& graph() const { return graph_; }
  const Tensor& node_embeddings() const { return nodes_; }
  std::size_t dim() const { return cfg_.dim; }

  // ---- input preparation --------------------------------------------------

  CopySource copy_source(const EquationSequence& eq) const {
    CopySource c;
    c.output_size = vocab_.size();
    std::vector<std::string> values;
    for (auto p : eq.number_positions()) {
      const auto& v = *eq.tokens[p].value;
      c.positions.push_back(p);
      if (vocab_.contains(v)) {
        c.targets.push_back(vocab_.id(v));
        continue;
      }
      auto it = std::find(c.slot_surfaces.begin(), c.slot_surfaces.end(), v);
      if (it == c.slot_surfaces.end()) {
        c.slot_surfaces.push_back(v);
        it = c.slot_surfaces.end() - 1;
      }
      c.targets.push_back(vocab_.size() + std::size_t(it - c.slot_surfaces.begin()));
    }
    if (!cfg_.use_copy) c = CopySource{{}, {}, {}, vocab_.size()};
    c.output_size = vocab_.size() + c.slot_surfaces.size();
    return c;
  }

  // Output id for a problem token given the copy slots of its equations.
  std::size_t output_id(const std::string& token, const CopySource& copy) const {
    if (vocab_.contains(token)) return vocab_.id(token);
    for (std::size_t k = 0; k < copy.slot_surfaces.size(); ++k)
      if (copy.slot_surfaces[k] == token) return vocab_.size() + k;
    return Vocabulary::kUnk;
  }

  std::string surface(std::size_t output, const CopySource& copy) const {
    if (output < vocab_.size()) return vocab_.token(output);
    return copy.slot_surfaces.at(output - vocab_.size());
  }

  PreparedExample prepare(const TrainingExample& ex) const {
    PreparedExample p;
    p.source = &ex;
    if (ex.equations.size() == 0) throw Error("example '" + ex.id + "' has no equation tokens");
    for (std::size_t i = 0; i < ex.equations.size(); ++i) {
      p.token_ids.push_back(eq_vocab_.id(ex.equations.tokens[i].surface));
      p.template_ids.push_back(eq_vocab_.id(ex.equations.masked[i]));
      p.kind_ids.push_back(std::size_t(ex.equations.tokens[i].kind));
    }
    p.copy = copy_source(ex.equations);
    for (const auto& t : ex.problem) p.targets.push_back(output_id(t, p.copy));
    p.targets.push_back(Vocabulary::kEos);
    return p;
  }

  // ---- encoders -------------------------------------------------------------

  EncoderOutput encode_equation(Tape& tape, const EquationSequence& eq) const {
    std::vector<std::size_t> tok, tmpl, kind;
    for (std::size_t i = 0; i < eq.size(); ++i) {
      tok.push_back(eq_vocab_.id(eq.tokens[i].surface));
      tmpl.push_back(eq_vocab_.id(eq.masked[i]));
      kind.push_back(std::size_t(eq.tokens[i].kind));
    }
    return encode_ids(tape, tok, tmpl, kind);
  }

  EncoderOutput encode_ids(Tape& tape, const std::vector<std::size_t>& tok, const std::vector<std::size_t>& tmpl,
                           const std::vector<std::size_t>& kind) const {
    if (tok.empty()) throw Error("cannot encode an empty equation");
    for (auto id : tok)
      if (id >= eq_vocab_.size()) throw Error("equation token id " + std::to_string(id) + " out of range");
    const auto& E = params_["eq/token"];
    auto types = tape.gather_rows(params_["eq/type"], kind);
    auto a_in = tape.add(tape.gather_rows(E, tok), types);
    auto b_in = tape.add(tape.gather_rows(E, tmpl), types);
    EncoderOutput out;
    out.token_stream = tape.add(run_gru(tape, a_in, "enc/a_fwd/", false), run_gru(tape, a_in, "enc/a_bwd/", true));
    out.template_stream =
        tape.add(run_gru(tape, b_in, "enc/b_fwd/", false), run_gru(tape, b_in, "enc/b_bwd/", true));
    auto lin = tape.add_bias(tape.matmul(out.token_stream, params_["glu/w1"]), params_["glu/b1"]);
    auto gate = tape.sigmoid(tape.add_bias(tape.matmul(out.template_stream, params_["glu/w2"]), params_["glu/b2"]));
    out.states = tape.mul(lin, gate);
    out.last = tape.row(out.states, tok.size() - 1);
    return out;
  }

  // z = mu + r * sigma; r = 0 when rng is null.
  LatentState posterior_latent(Tape& tape, const EncoderOutput& enc, std::mt19937_64* rng) const {
    auto st = gaussian(tape, enc.last, "post/", rng);
    st.prior = false;
    return st;
  }

  ProblemEncoding encode_problem(Tape& tape, const std::vector<std::string>& problem, std::mt19937_64* rng) const {
    return encode_problem_ids(tape, vocab_.encode(problem), rng);
  }

  ProblemEncoding encode_problem_ids(Tape& tape, std::vector<std::size_t> ids, std::mt19937_64* rng) const {
    if (ids.empty()) throw Error("cannot encode an empty problem");
    const std::size_t widest = *std::max_element(cfg_.kernel_widths.begin(), cfg_.kernel_widths.end());
    while (ids.size() < widest) ids.push_back(Vocabulary::kPad);
    auto emb = tape.gather_rows(params_["dec/emb"], ids);
    std::vector<Tensor> pooled;
    for (auto w : cfg_.kernel_widths) {
      const auto p = "cnn/" + std::to_string(w) + "/";
      auto conv = tape.tanh(tape.add_bias(tape.matmul(tape.unfold(emb, w), params_[p + "w"]), params_[p + "b"]));
      pooled.push_back(tape.max_pool_rows(conv));
    }
    ProblemEncoding out;
    out.q = tape.tanh(tape.add(tape.matmul(tape.concat(pooled), params_["cnn/wq"]), params_["cnn/bq"]));
    out.prior = gaussian(tape, out.q, "prior/", rng);
    out.prior.prior = true;
    return out;
  }

  Tensor topic_logits(Tape& tape, const Tensor& z) const {
    return tape.add(tape.matmul(z, params_["topic/w"]), params_["topic/b"]);
  }
  Tensor predict_topic(Tape& tape, const Tensor& z) const { return tape.softmax(topic_logits(tape, z)); }

  // ---- decoder pieces -----------------------------------------------------

  DecoderState init_decoder(Tape& tape, const EncoderOutput& enc, const Tensor& z, std::size_t topic_id) const {
    DecoderState st;
    st.s = init_state(tape, enc.last, z);
    st.context = Tensor::zeros({cfg_.dim});
    st.memory = memory_row(topic_id);
    return st;
  }

  Tensor init_state(Tape& tape, const Tensor& h_n, const Tensor& z) const {
    auto in = tape.concat({h_n, z, tape.mul(h_n, z)});
    return tape.tanh(tape.add(tape.matmul(in, params_["init/w"]), params_["init/b"]));
  }

  // Working copy of the 1-based topic's keyword block.
  Tensor memory_row(std::size_t topic_id) const {
    if (topic_id < 1 || topic_id > cfg_.topics) throw Error("topic id " + std::to_string(topic_id) + " out of range");
    const std::size_t K = cfg_.keywords, d = cfg_.dim;
    auto v = memory_.values().subspan((topic_id - 1) * K * d, K * d);
    return Tensor::matrix(K, d, {v.begin(), v.end()});
  }

  TopicAttention topic_attend(Tape& tape, const Tensor& s, const Tensor& c, const Tensor& memory) const {
    TopicAttention out;
    out.scores = tape.softmax(tape.matmul(memory, tape.matmul(tape.concat({s, c}), params_["topic/wt"])));
    out.f = tape.add(s, tape.matmul(tape.matmul(out.scores, memory), params_["topic/v"]));
    return out;
  }

  Tensor update_memory(Tape& tape, const Tensor& s_prime, const Tensor& memory) const {
    auto gate_in = tape.add(tape.matmul(s_prime, params_["mem/u_state"]), params_["mem/u_b"]);
    auto u = tape.sigmoid(tape.add_bias(tape.matmul(memory, params_["mem/u_slot"]), gate_in));
    auto cand_in = tape.add(tape.matmul(s_prime, params_["mem/c_state"]), params_["mem/c_b"]);
    auto cand = tape.tanh(tape.add_bias(tape.matmul(memory, params_["mem/c_slot"]), cand_in));
    return tape.add(memory, tape.mul(u, tape.sub(cand, memory)));
  }

  PathParams path_params() const {
    return {params_["path/w"], params_["path/b"], params_["path/u"], params_["path/attn"], cfg_.alpha};
  }

  const PathInputs& path_inputs_for(std::size_t word) const {
    static const PathInputs none;
    return word < paths_.size() ? paths_[word] : none;
  }

  // Knowledge vector g for a vocabulary word (zero when it has no neighbours).
  Aggregate knowledge(Tape& tape, std::size_t word) const {
    return aggregate_paths(tape, path_inputs_for(word), path_params());
  }

  // GRU(e_w, g H): the decoder input for the step after emitting `word`.
  Tensor commonsense_embed(Tape& tape, std::size_t word) const {
    auto e = tape.row(params_["dec/emb"], word);
    if (!cfg_.use_commonsense) return e;
    auto g = knowledge(tape, word);
    Tensor h = g.empty ? Tensor::zeros({cfg_.dim}) : tape.matmul(g.g, params_["cs/h"]);
    return gru_cell(tape, e, h, "cs/");
  }

  StepOutput decode_step(Tape& tape, DecoderState& st, const EncoderOutput& enc, const CopySource& copy) const {
    if (st.t >= cfg_.max_decode_length) throw Error("decoder exceeded the maximum length");
    const std::size_t word = st.prev < vocab_.size() ? st.prev : std::size_t(Vocabulary::kUnk);
    StepOutput out;
    auto e_w = tape.row(params_["dec/emb"], word);
    auto x = commonsense_embed(tape, word);
    auto s = gru_cell(tape, x, st.s, "dec/");
    auto scores = tape.matmul(enc.states, tape.matmul(s, params_["attn/w"]));
    out.attention = tape.softmax(scores);
    auto c = tape.matmul(out.attention, enc.states);

    auto s_prime = s;
    if (cfg_.use_topic_memory) {
      auto ta = topic_attend(tape, s, c, st.memory);
      s_prime = ta.f;
      out.topic_scores = ta.scores;
    }
    auto sc = tape.concat({s_prime, c});
    auto logits = tape.add(tape.matmul(tape.tanh(tape.matmul(sc, params_["out/vs"])), params_["out/w"]),
                           params_["out/b"]);
    if (!cfg_.use_copy || copy.empty()) {
      out.log_probs = tape.log_softmax(logits);
      out.probs = tape.softmax(logits);
    } else {
      out.copy = tape.softmax(tape.gather(scores, copy.positions));
      out.p_gen = tape.sigmoid(tape.add(tape.matmul(tape.concat({s_prime, c, e_w}), params_["copy/w"]),
                                        params_["copy/b"]));
      auto gen = tape.scale_by(tape.softmax(logits), out.p_gen);
      const std::size_t extra = copy.output_size - vocab_.size();
      if (extra) gen = tape.concat({gen, Tensor::zeros({extra})});
      auto copied = tape.scatter_add(tape.scale_by(out.copy, tape.one_minus(out.p_gen)), copy.targets, copy.output_size);
      out.probs = tape.add(gen, copied);
    }
    if (cfg_.use_topic_memory) st.memory = update_memory(tape, s_prime, st.memory);
    st.s = s;
    st.context = c;
    ++st.t;
    return out;
  }

  static Tensor target_log_prob(Tape& tape, const StepOutput& out, std::size_t target) {
    if (out.log_probs.defined() && target < out.log_probs.size()) return tape.pick(out.log_probs, target);
    return tape.log(tape.pick(out.probs, target));
  }

  // ---- losses ---------------------------------------------------------------

  // One example's loss: token NLL (sum) + anneal * KL(prior || posterior)
  // + topic_weight * CE. The decoder runs on the prior latent and the gold
  // topic row, teacher forced.
  LossTerms example_loss(Tape& tape, const PreparedExample& ex, const LossOptions& opt, std::mt19937_64& rng) const {
    auto enc = encode_ids(tape, ex.token_ids, ex.template_ids, ex.kind_ids);
    auto post = posterior_latent(tape, enc, nullptr);
    auto corrupted = corrupt_problem(ex.source->problem, opt.mask_rate, opt.delete_rate, rng);
    auto prob = encode_problem(tape, corrupted, opt.sample_latent ? &rng : nullptr);
    auto kl = kl_divergence(tape, prob.prior, post);

    LossTerms terms;
    auto logits = topic_logits(tape, prob.prior.z);
    std::size_t topic = std::size_t(ex.source->topic_id);
    Tensor ce = Tensor::scalar(0.0);
    if (topic >= 1 && topic <= cfg_.topics) {
      ce = tape.scale(tape.pick(tape.log_softmax(logits), topic - 1), -1.0);
    } else {
      topic = argmax(logits) + 1;
    }

    auto st = init_decoder(tape, enc, prob.prior.z, topic);
    std::vector<Tensor> nll;
    for (auto target : ex.targets) {
      auto out = decode_step(tape, st, enc, ex.copy);
      nll.push_back(target_log_prob(tape, out, target));
      st.prev = target;
    }
    auto nll_sum = tape.scale(tape.sum(tape.concat(nll)), -1.0);
    terms.nll = nll_sum.item();
    terms.kl = kl.item();
    terms.topic_ce = ce.item();
    terms.tokens = ex.targets.size();
    terms.total = tape.add(tape.add(nll_sum, tape.scale(kl, opt.anneal_weight)), tape.scale(ce, opt.topic_weight));
    return terms;
  }

  // Mean of example losses over a batch.
  LossTerms total_loss(Tape& tape, const std::vector<PreparedExample>& batch, const LossOptions& opt,
                       std::mt19937_64& rng) const {
    if (batch.empty()) throw Error("empty batch");
    LossTerms sum;
    std::vector<Tensor> parts;
    for (const auto& ex : batch) {
      auto t = example_loss(tape, ex, opt, rng);
      parts.push_back(t.total);
      sum.nll += t.nll, sum.kl += t.kl, sum.topic_ce += t.topic_ce, sum.tokens += t.tokens;
    }
    const double n = double(batch.size());
    sum.total = tape.scale(tape.sum(tape.concat(parts)), 1.0 / n);
    sum.nll /= n, sum.kl /= n, sum.topic_ce /= n;
    return sum;
  }

  // Teacher-forced token NLL under the inference path (posterior mean latent,
  // predicted topic). Returns the summed NLL and the token count.
  std::pair<double, std::size_t> inference_nll(const PreparedExample& ex) const {
    Tape tape(Tape::Mode::kInference);
    auto enc = encode_ids(tape, ex.token_ids, ex.template_ids, ex.kind_ids);
    auto post = posterior_latent(tape, enc, nullptr);
    auto st = init_decoder(tape, enc, post.z, argmax(topic_logits(tape, post.z)) + 1);
    double nll = 0.0;
    for (auto target : ex.targets) {
      auto out = decode_step(tape, st, enc, ex.copy);
      nll -= target_log_prob(tape, out, target).item();
      st.prev = target;
    }
    return {nll, ex.targets.size()};
  }

  // ---- generation -------------------------------------------------------------

  Generation generate(const EquationSequence& eq, const DecodeOptions& opt = {}) const {
    Tape tape(Tape::Mode::kInference);
    auto copy = copy_source(eq);
    auto enc = encode_equation(tape, eq);
    std::mt19937_64 rng(opt.seed);
    auto post = posterior_latent(tape, enc, opt.sample_latent ? &rng : nullptr);
    Generation g;
    g.topic_id = int(argmax(topic_logits(tape, post.z))) + 1;
    auto start = init_decoder(tape, enc, post.z, std::size_t(g.topic_id));
    const std::size_t limit = std::min(opt.max_length ? opt.max_length : cfg_.max_decode_length, cfg_.max_decode_length);

    struct Hyp {
      DecoderState st;
      double score = 0.0;
      std::vector<CopyEvent> copies;
      bool done = false;
    };
    std::vector<Hyp> beam = {{start, 0.0, {}, false}};
    const std::size_t width = std::max<std::size_t>(1, opt.beam_width);
    for (std::size_t t = 0; t < limit; ++t) {
      std::vector<Hyp> next;
      bool any = false;
      for (auto& h : beam) {
        if (h.done) {
          next.push_back(h);
          continue;
        }
        any = true;
        auto st = h.st;
        auto out = decode_step(tape, st, enc, copy);
        auto p = out.probs.values();
        std::vector<std::size_t> order(p.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        const std::size_t k = std::min(width, order.size());
        std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(),
                          [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
        for (std::size_t r = 0; r < k; ++r) {
          const std::size_t id = order[r];
          if (p[id] <= 0.0) continue;
          Hyp n{st, h.score + std::log(p[id]), h.copies, id == Vocabulary::kEos};
          n.st.prev = id;
          if (!n.done) {
            n.st.prefix.push_back(id);
            if (auto ev = copy_event(out, copy, id, t)) n.copies.push_back(*ev);
          }
          next.push_back(std::move(n));
        }
      }
      if (!any) break;
      std::stable_sort(next.begin(), next.end(), [](const Hyp& a, const Hyp& b) { return a.score > b.score; });
      if (next.size() > width) next.resize(width);
      beam = std::move(next);
    }
    const Hyp* best = &beam.front();
    for (const auto& h : beam)
      if (h.done && (!best->done || h.score > best->score)) best = &h;
    for (auto id : best->st.prefix) g.tokens.push_back(surface(id, copy));
    g.copies = best->copies;
    return g;
  }

  static std::size_t argmax(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[best]) best = i;
    return best;
  }

 private:
  void init_parameters() {
    std::mt19937_64 rng(cfg_.seed);
    const std::size_t d = cfg_.dim, V = vocab_.size(), P = cfg_.topics;
    const std::size_t dg = nodes_.defined() ? nodes_.cols() : d;
    auto gru = [&](const std::string& p, std::size_t in) {
      params_.add(p + "w", {in, 3 * d}, rng);
      params_.add(p + "u", {d, 3 * d}, rng);
      params_.add(p + "b", {3 * d}, rng);
    };
    params_.add("eq/token", {eq_vocab_.size(), d}, rng);
    params_.add("eq/type", {kTokenKinds, d}, rng);
    for (auto s : {"enc/a_fwd/", "enc/a_bwd/", "enc/b_fwd/", "enc/b_bwd/"}) gru(s, d);
    params_.add("glu/w1", {d, d}, rng);
    params_.add("glu/b1", {d}, rng);
    params_.add("glu/w2", {d, d}, rng);
    params_.add("glu/b2", {d}, rng);
    params_.add("post/w", {d, 2 * d}, rng);
    params_.add("post/b", {2 * d}, rng);
    params_.add("dec/emb", {V, d}, rng);
    for (auto w : cfg_.kernel_widths) {
      const auto p = "cnn/" + std::to_string(w) + "/";
      params_.add(p + "w", {w * d, d}, rng);
      params_.add(p + "b", {d}, rng);
    }
    params_.add("cnn/wq", {cfg_.kernel_widths.size() * d, d}, rng);
    params_.add("cnn/bq", {d}, rng);
    params_.add("prior/w", {d, 2 * d}, rng);
    params_.add("prior/b", {2 * d}, rng);
    params_.add("topic/w", {d, P}, rng);
    params_.add("topic/b", {P}, rng);
    params_.add("init/w", {3 * d, d}, rng);
    params_.add("init/b", {d}, rng);
    gru("dec/", d);
    gru("cs/", d);
    params_.add("cs/h", {d, d}, rng);
    params_.add("path/w", {2 * dg, d}, rng);
    params_.add("path/b", {d}, rng);
    params_.add("path/u", {d, d}, rng);
    params_.add("path/attn", {dg, d}, rng);
    params_.add("attn/w", {d, d}, rng);
    params_.add("topic/wt", {2 * d, d}, rng);
    params_.add("topic/v", {d, d}, rng);
    params_.add("mem/u_state", {d, d}, rng);
    params_.add("mem/u_slot", {d, d}, rng);
    params_.add("mem/u_b", {d}, rng);
    params_.add("mem/c_state", {d, d}, rng);
    params_.add("mem/c_slot", {d, d}, rng);
    params_.add("mem/c_b", {d}, rng);
    params_.add("out/vs", {2 * d, d}, rng);
    params_.add("out/w", {d, V}, rng);
    params_.add("out/b", {V}, rng);
    params_.add("copy/w", {3 * d, 1}, rng);
    params_.add("copy/b", {1}, rng);

    // Words known to the graph start from their pretrained node vectors.
    if (graph_ && nodes_.cols() == d) {
      auto emb = params_["dec/emb"].mutable_values();
      for (std::size_t w = Vocabulary::kReserved; w < V; ++w)
        if (auto n = graph_->find(vocab_.token(w)))
          std::copy_n(&nodes_.values()[*n * d], d, &emb[w * d]);
    }
  }

  // Keyword rows take the (initial) embedding of each keyword; missing
  // keywords leave zero rows.
  void build_memory(const std::vector<std::vector<std::string>>& keywords) {
    const std::size_t K = cfg_.keywords, d = cfg_.dim;
    std::vector<double> m(cfg_.topics * K * d, 0.0);
    const auto emb = params_["dec/emb"].values();
    for (std::size_t p = 0; p < cfg_.topics && p < keywords.size(); ++p)
      for (std::size_t k = 0; k < K && k < keywords[p].size(); ++k) {
        const auto id = vocab_.id(keywords[p][k]);
        std::copy_n(&emb[id * d], d, &m[(p * K + k) * d]);
      }
    memory_ = Tensor::matrix(cfg_.topics * K, d, std::move(m));
  }

  void build_paths() {
    paths_.assign(vocab_.size(), PathInputs{});
    if (!graph_) return;
    for (std::size_t w = Vocabulary::kReserved; w < vocab_.size(); ++w)
      paths_[w] = path_inputs(bfs_two_hop(*graph_, vocab_.token(w), {cfg_.first_hop_cap, cfg_.second_hop_cap}), nodes_);
  }

  LatentState gaussian(Tape& tape, const Tensor& h, const std::string& p, std::mt19937_64* rng) const {
    const std::size_t d = cfg_.dim;
    auto both = tape.add(tape.matmul(h, params_[p + "w"]), params_[p + "b"]);
    LatentState st;
    st.mu = tape.slice(both, 0, d);
    st.log_sigma = tape.slice(both, d, d);
    if (!rng) {
      st.z = st.mu;
      return st;
    }
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> r(d);
    for (auto& x : r) x = n(*rng);
    st.z = tape.add(st.mu, tape.mul(Tensor::vector(std::move(r)), tape.exp(st.log_sigma)));
    return st;
  }

  Tensor gru_cell(Tape& tape, const Tensor& x, const Tensor& h, const std::string& p) const {
    auto xw = tape.add(tape.matmul(x, params_[p + "w"]), params_[p + "b"]);
    return gru_update(tape, xw, h, p);
  }

  // xw already holds x W + b for the three gates.
  Tensor gru_update(Tape& tape, const Tensor& xw, const Tensor& h, const std::string& p) const {
    const std::size_t d = cfg_.dim;
    auto hu = tape.matmul(h, params_[p + "u"]);
    auto z = tape.sigmoid(tape.add(tape.slice(xw, 0, d), tape.slice(hu, 0, d)));
    auto r = tape.sigmoid(tape.add(tape.slice(xw, d, d), tape.slice(hu, d, d)));
    auto n = tape.tanh(tape.add(tape.slice(xw, 2 * d, d), tape.mul(r, tape.slice(hu, 2 * d, d))));
    return tape.add(n, tape.mul(z, tape.sub(h, n)));
  }

  Tensor run_gru(Tape& tape, const Tensor& inputs, const std::string& p, bool reverse) const {
    const std::size_t n = inputs.rows();
    auto xw = tape.add_bias(tape.matmul(inputs, params_[p + "w"]), params_[p + "b"]);
    Tensor h = Tensor::zeros({cfg_.dim});
    std::vector<Tensor> states(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = reverse ? n - 1 - k : k;
      h = gru_update(tape, tape.row(xw, t), h, p);
      states[t] = h;
    }
    return tape.concat_rows(states);
  }

  std::optional<CopyEvent> copy_event(const StepOutput& out, const CopySource& copy, std::size_t id,
                                      std::size_t step) const {
    if (!out.copy.defined()) return std::nullopt;
    double mass = 0.0, best = -1.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < copy.positions.size(); ++i)
      if (copy.targets[i] == id) {
        mass += out.copy[i];
        if (out.copy[i] > best) best = out.copy[i], pos = copy.positions[i];
      }
    if (best < 0) return std::nullopt;
    const double pg = out.p_gen[0];
    CopyEvent ev;
    ev.step = step;
    ev.surface = surface(id, copy);
    ev.position = pos;
    ev.copy_mass = (1.0 - pg) * mass;
    ev.generate_mass = id < vocab_.size() ? out.probs[id] - ev.copy_mass : 0.0;
    return ev;
  }

  ModelConfig cfg_;
  Vocabulary eq_vocab_;
  Vocabulary vocab_;
  std::shared_ptr<const ConceptGraph> graph_;
  Tensor nodes_;
  ParameterStore params_;
  Tensor memory_;
  std::vector<PathInputs> paths_;

 public:
  // KL(N(prior) || N(posterior)) for diagonal Gaussians, summed over dims.
  static Tensor kl_divergence(Tape& tape, const LatentState& prior, const LatentState& posterior) {
    const auto& ly = prior.log_sigma;
    const auto& lx = posterior.log_sigma;
    auto var_ratio_num = tape.add(tape.exp(tape.scale(ly, 2.0)), tape.square(tape.sub(prior.mu, posterior.mu)));
    auto quad = tape.scale(tape.mul(var_ratio_num, tape.exp(tape.scale(lx, -2.0))), 0.5);
    auto per_dim = tape.add_scalar(tape.add(tape.sub(lx, ly), quad), -0.5);
    return tape.sum(per_dim);
  }
};

inline Tensor kl_divergence(Tape& tape, const LatentState& prior, const LatentState& posterior) {
  return Model::kl_divergence(tape, prior, posterior);
}

}  // namespace mwpgen

#pragma once

// Command-line pipeline: preprocess, lda-fit, kg-pretrain, train, generate,
// evaluate. Exit codes: 0 success, 1 usage error, 2 data error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mwpgen/checkpoint.hpp"
#include "mwpgen/dataset.hpp"
#include "mwpgen/gat.hpp"
#include "mwpgen/graph.hpp"
#include "mwpgen/lda.hpp"
#include "mwpgen/metrics.hpp"
#include "mwpgen/trainer.hpp"

namespace mwpgen::cli {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr int kUsageError = 1;
inline constexpr int kDataError = 2;

// Config files: a JSON object, or key=value lines ('#' comments). Keys are
// option names without dashes.
// Items are routed to the subcommand being run.
class ConfigFormat : public CLI::ConfigBase {
 public:
  explicit ConfigFormat(const CLI::App& root) : root_(root) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    auto items = parse(in);
    const auto subs = root_.get_subcommands();
    if (!subs.empty())
      for (auto& item : items)
        if (item.parents.empty() || (item.parents.size() == 1 && item.parents[0] == "default"))
          item.parents = {subs.front()->get_name()};
    return items;
  }

 private:
  std::vector<CLI::ConfigItem> parse(std::istream& in) const {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') {
      std::istringstream s(text);
      return CLI::ConfigBase::from_config(s);
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      auto scalar = [&](const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_object()) throw CLI::ConversionError("config key '" + key + "' holds an object");
        return v.dump();
      };
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      items.push_back(std::move(item));
    }
    return items;
  }

  const CLI::App& root_;
};

inline std::string checksum_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
  return os.str();
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Final value of every option of a subcommand, defaults included.
inline nlohmann::json option_values(const CLI::App& sub) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto* opt : sub.get_options()) {
    const auto name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "h") continue;
    if (opt->count() == 0) {
      j[name] = opt->get_default_str();
    } else if (opt->get_items_expected_max() > 1) {
      j[name] = opt->results();
    } else {
      j[name] = opt->results().back();
    }
  }
  return j;
}

class Run {
 public:
  Run(const CLI::App& sub, std::string out_dir, std::ostream& out, std::ostream& err, int verbosity)
      : sub_(sub), dir_(std::move(out_dir)), out_(out), err_(err), verbosity_(verbosity) {}

  void start(const std::vector<std::string>& inputs) {
    for (const auto& p : inputs)
      if (!p.empty() && !std::filesystem::is_regular_file(p)) throw DataError("missing input file: " + p);
    std::filesystem::create_directories(dir_);
    for (const auto& p : inputs)
      if (!p.empty()) inputs_[p] = checksum_file(p);
    log_.open(path(sub_.get_name() + ".log"));
    log_ << "# " << sub_.get_name() << " started " << utc_now() << "\n";
  }

  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

  std::string output(const std::string& name) {
    outputs_.push_back(name);
    return path(name);
  }

  void log(const std::string& line, int level = 1) {
    log_ << line << "\n";
    log_.flush();
    if (verbosity_ >= level) err_ << line << "\n";
  }

  std::ostream& out() { return out_; }

  void finish() {
    nlohmann::json m;
    m["tool"] = "mwpgen";
    m["versions"] = {{"mwpgen", std::string(kVersion)}, {"container_format", kContainerVersion}};
    m["subcommand"] = sub_.get_name();
    m["config"] = option_values(sub_);
    m["inputs"] = nlohmann::json::object();
    for (const auto& [p, sum] : inputs_) m["inputs"][p] = {{"fnv1a64", sum}};
    outputs_.push_back(sub_.get_name() + ".log");
    std::sort(outputs_.begin(), outputs_.end());
    m["outputs"] = outputs_;
    std::ofstream f(path("manifest.json"));
    f << m.dump(2) << "\n";
    if (!f) throw Error("cannot write manifest in " + dir_);
  }

 private:
  const CLI::App& sub_;
  std::string dir_;
  std::ostream& out_;
  std::ostream& err_;
  int verbosity_;
  std::ofstream log_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  if (!f) throw Error("cannot write " + path);
}

// ---- subcommands -------------------------------------------------------------

struct PreprocessArgs {
  std::string input;
  std::size_t max_tokens = 45;
  std::size_t min_freq = 2;
  std::size_t dev_percent = 10;
};

inline void preprocess(Run& run, const PreprocessArgs& a) {
  run.start({a.input});
  auto raw = read_raw_jsonl(a.input);
  auto res = preprocess_dataset(raw.records, {a.max_tokens, a.min_freq});
  res.report.malformed.insert(res.report.malformed.begin(), raw.malformed.begin(), raw.malformed.end());
  std::stable_sort(res.report.malformed.begin(), res.report.malformed.end(),
                   [](const auto& x, const auto& y) { return x.line < y.line; });
  std::vector<TrainingExample> train, dev;
  for (const auto& ex : res.examples)
    (a.dev_percent && fnv1a64(ex.id) % 100 < a.dev_percent ? dev : train).push_back(ex);
  write_examples(run.output("examples.jsonl"), res.examples);
  write_examples(run.output("train.jsonl"), train);
  write_examples(run.output("dev.jsonl"), dev);
  std::ostringstream summary;
  summary << res.report.summary() << "train: " << train.size() << "\n"
          << "dev: " << dev.size() << "\n";
  write_text(run.output("preprocess_report.txt"), summary.str());
  nlohmann::json j = {{"read", res.report.read + res.report.malformed.size()},
                      {"kept", res.report.kept},
                      {"dropped_long", res.report.dropped_long},
                      {"unk_rate", res.report.unk_rate},
                      {"train", train.size()},
                      {"dev", dev.size()}};
  j["malformed"] = nlohmann::json::array();
  for (const auto& m : res.report.malformed) j["malformed"].push_back({{"line", m.line}, {"reason", m.reason}});
  write_text(run.output("preprocess_report.json"), j.dump(2) + "\n");
  run.out() << summary.str();
  run.log(summary.str(), 2);
  if (res.examples.empty()) throw DataError("no usable examples in " + a.input);
}

struct LdaArgs {
  std::string input;
  std::vector<std::string> assign;
  std::size_t topics = 9;
  std::size_t iterations = 500;
  double alpha = 0.0;
  double beta = 0.01;
  std::size_t keywords = 30;
  std::size_t infer_sweeps = 50;
  std::uint64_t seed = 0;
};

inline std::string topics_name(const std::string& input) {
  return std::filesystem::path(input).stem().string() + ".topics.jsonl";
}

inline void lda_fit_command(Run& run, const LdaArgs& a) {
  std::vector<std::string> inputs = {a.input};
  inputs.insert(inputs.end(), a.assign.begin(), a.assign.end());
  std::set<std::string> names;
  for (const auto& p : inputs)
    if (!names.insert(topics_name(p)).second) throw CLI::ValidationError("input file names must have distinct stems");
  run.start(inputs);
  auto train = read_examples(a.input);
  if (train.empty()) throw DataError("no examples in " + a.input);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& ex : train) corpus.push_back(topic_document(ex.problem));
  LdaConfig cfg;
  cfg.num_topics = a.topics;
  cfg.iterations = a.iterations;
  cfg.alpha = a.alpha;
  cfg.beta = a.beta;
  cfg.seed = a.seed;
  cfg.infer_sweeps = a.infer_sweeps;
  const auto model = lda_fit(corpus, cfg);
  for (std::size_t i = 0; i < train.size(); ++i) train[i].topic_id = model.document_topic(i);
  write_examples(run.output(topics_name(a.input)), train);
  for (const auto& p : a.assign) {
    auto docs = read_examples(p);
    for (auto& ex : docs) ex.topic_id = assign_topic(topic_document(ex.problem), model, a.seed).topic_id;
    write_examples(run.output(topics_name(p)), docs);
  }
  lda_to_container(model).save(run.output("lda.bin"));
  nlohmann::json kw = nlohmann::json::object();
  for (std::size_t t = 1; t <= model.num_topics; ++t) kw[std::to_string(t)] = top_keywords(model, int(t), a.keywords);
  write_text(run.output("keywords.json"), kw.dump(2) + "\n");
  std::vector<std::size_t> sizes(model.num_topics, 0);
  for (const auto& ex : train) ++sizes[std::size_t(ex.topic_id) - 1];
  std::ostringstream os;
  os << "documents: " << train.size() << " (" << model.skipped_documents << " without topic words)\n";
  for (std::size_t t = 0; t < sizes.size(); ++t) os << "topic " << t + 1 << ": " << sizes[t] << "\n";
  run.out() << os.str();
  run.log(os.str(), 2);
}

struct KgArgs {
  std::string graph;
  std::string vocab;
  bool grow_relations = false;
  std::size_t dim = 256;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t epochs = 100;
  std::size_t edges_per_step = 256;
  double lr = 0.005;
  std::uint64_t seed = 0;
};

inline void kg_pretrain(Run& run, const KgArgs& a) {
  run.start({a.graph, a.vocab});
  GraphLoadOptions opt;
  opt.grow_relations = a.grow_relations;
  if (!a.vocab.empty())
    for (const auto& ex : read_examples(a.vocab)) opt.vocabulary.insert(ex.problem.begin(), ex.problem.end());
  GraphLoadReport rep;
  ConceptGraph g;
  try {
    g = load_graph(a.graph, opt, &rep);
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
  GatConfig cfg;
  cfg.dim = a.dim;
  cfg.layers = a.layers;
  cfg.heads = a.heads;
  cfg.epochs = a.epochs;
  cfg.edges_per_step = a.edges_per_step;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  auto result = gat_pretrain(g, cfg);
  Container c;
  c.kind = "graph";
  store_graph(c, g);
  c.put("graph/embeddings", result.embeddings);
  c.save(run.output("graph.bin"));
  nlohmann::json j = {{"rows", rep.rows},
                      {"edges", rep.edges},
                      {"duplicates", rep.duplicates},
                      {"malformed", rep.malformed},
                      {"unknown_relation", rep.unknown_relation},
                      {"out_of_vocabulary", rep.out_of_vocabulary},
                      {"nodes", g.node_count()},
                      {"relations", g.relations().size()},
                      {"loss_history", result.loss_history}};
  write_text(run.output("kg_report.json"), j.dump(2) + "\n");
  std::ostringstream os;
  os << "nodes: " << g.node_count() << "\nedges: " << rep.edges << "\nskipped rows: "
     << rep.duplicates + rep.malformed + rep.unknown_relation + rep.out_of_vocabulary << "\n";
  if (!result.loss_history.empty())
    os << "link loss: " << result.loss_history.front() << " -> " << result.loss_history.back() << "\n";
  run.out() << os.str();
  run.log(os.str(), 2);
}

struct TrainArgs {
  std::string train;
  std::string dev;
  std::string lda;
  std::string graph;
  std::string resume;
  ModelConfig model;
  TrainConfig train_cfg;
  std::size_t min_freq = 2;
  bool no_copy = false;
  bool no_topic_memory = false;
  bool no_commonsense = false;
};

inline void train_command(Run& run, TrainArgs a) {
  run.start({a.train, a.dev, a.lda, a.graph, a.resume});
  auto train = read_examples(a.train);
  if (train.empty()) throw DataError("no examples in " + a.train);
  std::vector<TrainingExample> dev;
  if (!a.dev.empty()) dev = read_examples(a.dev);

  auto cfg = a.model;
  cfg.use_copy = !a.no_copy;
  cfg.use_topic_memory = !a.no_topic_memory;
  cfg.use_commonsense = !a.no_commonsense && !a.graph.empty();
  std::vector<std::vector<std::string>> keywords(cfg.topics);
  if (!a.lda.empty()) {
    const auto lda = lda_from_container(Container::load(a.lda));
    cfg.topics = lda.num_topics;
    keywords = lda_keywords(lda, cfg.keywords);
  }
  for (const auto& ex : train)
    if (ex.topic_id > int(cfg.topics)) throw DataError("example " + ex.id + " has a topic beyond the topic count");
  std::shared_ptr<const ConceptGraph> graph;
  Tensor nodes;
  if (!a.graph.empty()) {
    const auto c = Container::load(a.graph);
    if (c.kind != "graph") throw FormatError("not a graph file (kind '" + c.kind + "')");
    graph = std::make_shared<ConceptGraph>(restore_graph(c));
    nodes = c.tensor("graph/embeddings");
  }
  auto model = build_model(cfg, train, keywords, graph, nodes, a.min_freq);
  Trainer trainer(*model, a.train_cfg, train, dev);
  const auto csv_path = run.output("loss.csv");
  bool append = false;
  if (!a.resume.empty()) {
    trainer.resume(Container::load(a.resume));
    append = std::filesystem::exists(csv_path);
  }
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!append) csv << loss_csv_header() << "\n";
  const auto best = run.output("best.ckpt"), last = run.output("last.ckpt");
  run.log("parameters: " + std::to_string(model->params().count_scalars()) +
          ", vocabulary: " + std::to_string(model->vocab().size()));
  Trainer::Hooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    csv << loss_csv_row(s) << "\n";
    if (s.step % 50 == 0) run.log("step " + loss_csv_row(s), 2);
  };
  hooks.on_epoch = [&](std::size_t epoch, double bleu, bool improved) {
    std::ostringstream os;
    os << "epoch " << epoch + 1 << " dev_bleu2 " << bleu << (improved ? " (best)" : "");
    run.log(os.str());
  };
  hooks.on_best = [&](const Container& c) { c.save(best); };
  hooks.on_epoch_end = [&](const Container& c) { c.save(last); };
  trainer.run(hooks);
  csv.flush();
  if (!std::filesystem::exists(last)) trainer.checkpoint().save(last);
  if (!std::filesystem::exists(best)) trainer.checkpoint().save(best);
  const auto& p = trainer.progress();
  nlohmann::json summary = {{"steps", p.step},
                            {"epochs", p.epoch},
                            {"best_dev_bleu2", p.best_dev_bleu},
                            {"best_step", p.best_step},
                            {"model", model->config().to_json()},
                            {"training", trainer.config().to_json()}};
  write_text(run.output("train_summary.json"), summary.dump(2) + "\n");
  run.out() << "steps: " << p.step << "\nbest dev bleu2: " << p.best_dev_bleu << " (step " << p.best_step << ")\n";
}

struct GenerateArgs {
  std::string checkpoint;
  std::string input;
  std::size_t beam = 1;
  bool sample = false;
  std::uint64_t seed = 1;
  std::size_t max_length = 0;
  bool copies = false;
};

inline void generate_command(Run& run, const GenerateArgs& a) {
  run.start({a.checkpoint, a.input});
  auto model = load_model(a.checkpoint);
  std::ifstream in(a.input);
  const auto inputs = read_equation_inputs(in);
  DecodeOptions opt;
  opt.beam_width = a.beam;
  opt.sample_latent = a.sample;
  opt.seed = a.seed;
  opt.max_length = a.max_length;
  std::ofstream out(run.output("generated.jsonl"));
  for (const auto& e : inputs) {
    GeneratedProblem g;
    try {
      g = generate_problem(*model, e, opt);
    } catch (const ParseError& err) {
      throw DataError("input " + e.id + ": " + err.what());
    }
    out << g.to_json(a.copies).dump() << "\n";
    run.log(e.id + ": " + g.text, 2);
  }
  run.out() << "generated: " << inputs.size() << "\n";
}

struct EvaluateArgs {
  std::string candidates;
  std::string references;
  std::string recall_denominator = "reference";
};

struct TextRecord {
  std::string id;
  Tokens tokens;
  Tokens equation_tokens;
};

inline std::vector<TextRecord> read_text_records(const std::string& path, bool prefer_generated) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<TextRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      TextRecord r;
      r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      const auto& text = prefer_generated && j.contains("generated") ? j.at("generated") : j.at("problem");
      r.tokens = text.is_array() ? text.get<Tokens>() : tokenize_problem(text.get<std::string>());
      if (j.contains("equations"))
        for (const auto& t : tokenize_equations(normalize_variables(j.at("equations").get<std::vector<std::string>>())).tokens)
          r.equation_tokens.push_back(t.surface);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void evaluate_command(Run& run, const EvaluateArgs& a) {
  run.start({a.candidates, a.references});
  const auto cands = read_text_records(a.candidates, true);
  const auto refs = read_text_records(a.references, false);
  std::map<std::string, const TextRecord*> by_id;
  for (const auto& c : cands)
    if (!by_id.emplace(c.id, &c).second) throw DataError("duplicate candidate id " + c.id);
  std::vector<std::string> ids;
  std::vector<Tokens> c, r, basis;
  for (const auto& ref : refs) {
    auto it = by_id.find(ref.id);
    if (it == by_id.end()) throw DataError("no candidate for reference id " + ref.id);
    ids.push_back(ref.id);
    c.push_back(it->second->tokens);
    r.push_back(ref.tokens);
    if (a.recall_denominator == "equation") {
      if (ref.equation_tokens.empty()) throw DataError("reference " + ref.id + " has no equations");
      basis.push_back(ref.equation_tokens);
    }
  }
  const auto report = evaluate(ids, c, r, a.recall_denominator == "equation" ? &basis : nullptr);
  write_text(run.output("metrics.json"), report.to_json().dump(2) + "\n");
  std::ostringstream os;
  os << std::setprecision(6) << "examples: " << ids.size() << "\nbleu2: " << report.bleu2
     << "\nrouge_l: " << report.rouge_l << "\ndist1: " << report.dist1 << "\ndist2: " << report.dist2
     << "\nnumber_recall: " << report.number_recall.value << (report.number_recall.undefined ? " (undefined)" : "")
     << "\n";
  run.out() << os.str();
  run.log(os.str(), 2);
}

// ---- entry point ---------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Equation-to-word-problem generator pipeline", "mwpgen"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Config file (JSON object or key=value lines); flags take precedence");
  app.config_formatter(std::make_shared<ConfigFormat>(app));
  app.allow_config_extras(CLI::config_extras_mode::error);

  std::string out_dir;
  int verbosity = 0;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--out-dir", out_dir, "Directory for every artifact of this run")->required();
    sub->add_flag("-v,--verbose", verbosity, "Log progress to stderr (repeat for more)");
    sub->fallthrough();
    sub->footer("--config FILE reads any option above from a JSON object or key=value lines; flags win.");
  };

  PreprocessArgs pre;
  auto* s_pre = app.add_subcommand("preprocess", "Raw JSONL -> tokenized examples and a report");
  common(s_pre);
  s_pre->add_option("--input", pre.input, "Raw JSONL with equations and problem")->required();
  s_pre->add_option("--max-tokens", pre.max_tokens, "Drop problems longer than this")->check(CLI::PositiveNumber);
  s_pre->add_option("--min-freq", pre.min_freq, "Vocabulary threshold used for the UNK rate");
  s_pre->add_option("--dev-percent", pre.dev_percent, "Share of examples (by id hash) held out as dev")
      ->check(CLI::Range(0, 100));

  LdaArgs lda;
  auto* s_lda = app.add_subcommand("lda-fit", "Examples -> topic model, topic assignments and keywords");
  common(s_lda);
  s_lda->add_option("--input", lda.input, "Examples to fit on")->required();
  s_lda->add_option("--assign", lda.assign, "More example files to assign topics to");
  s_lda->add_option("--topics", lda.topics, "Number of topics")->check(CLI::PositiveNumber);
  s_lda->add_option("--iterations", lda.iterations, "Gibbs sweeps")->check(CLI::PositiveNumber);
  s_lda->add_option("--alpha", lda.alpha, "Document-topic prior (0 selects 50/topics)");
  s_lda->add_option("--beta", lda.beta, "Topic-word prior")->check(CLI::PositiveNumber);
  s_lda->add_option("--keywords", lda.keywords, "Keywords listed per topic");
  s_lda->add_option("--infer-sweeps", lda.infer_sweeps, "Sweeps for held-out topic inference");
  s_lda->add_option("--seed", lda.seed, "Random seed")->required();

  KgArgs kg;
  auto* s_kg = app.add_subcommand("kg-pretrain", "Commonsense TSV -> graph and node embeddings");
  common(s_kg);
  s_kg->add_option("--graph", kg.graph, "TSV edges: head, relation, tail, weight")->required();
  s_kg->add_option("--vocab", kg.vocab, "Examples whose words restrict the graph");
  s_kg->add_flag("--grow-relations", kg.grow_relations, "Accept relations outside the standard list");
  s_kg->add_option("--dim", kg.dim, "Embedding size")->check(CLI::PositiveNumber);
  s_kg->add_option("--layers", kg.layers, "Attention layers");
  s_kg->add_option("--heads", kg.heads, "Heads per layer")->check(CLI::PositiveNumber);
  s_kg->add_option("--epochs", kg.epochs, "Training epochs");
  s_kg->add_option("--edges-per-step", kg.edges_per_step, "Positive edges per epoch")->check(CLI::PositiveNumber);
  s_kg->add_option("--lr", kg.lr, "Learning rate")->check(CLI::PositiveNumber);
  s_kg->add_option("--seed", kg.seed, "Random seed")->required();

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Examples -> checkpoints and a loss log");
  common(s_tr);
  s_tr->add_option("--train", tr.train, "Training examples (with topics)")->required();
  s_tr->add_option("--dev", tr.dev, "Dev examples for checkpoint selection");
  s_tr->add_option("--lda", tr.lda, "Topic model from lda-fit");
  s_tr->add_option("--graph", tr.graph, "Graph and embeddings from kg-pretrain");
  s_tr->add_option("--resume", tr.resume, "Checkpoint to continue from");
  s_tr->add_option("--dim", tr.model.dim, "Hidden and latent size")->check(CLI::PositiveNumber);
  s_tr->add_option("--topics", tr.model.topics, "Topic count when no topic model is given")
      ->check(CLI::PositiveNumber);
  s_tr->add_option("--keywords", tr.model.keywords, "Topic memory slots per topic")->check(CLI::PositiveNumber);
  s_tr->add_option("--path-alpha", tr.model.alpha, "Weight of the direct hop in two-hop paths")
      ->check(CLI::Range(0.0, 1.0));
  s_tr->add_option("--max-length", tr.model.max_decode_length, "Decoding limit")->check(CLI::PositiveNumber);
  s_tr->add_option("--min-freq", tr.min_freq, "Problem vocabulary threshold");
  s_tr->add_flag("--no-copy", tr.no_copy, "Disable number copying");
  s_tr->add_flag("--no-topic-memory", tr.no_topic_memory, "Disable topic memory");
  s_tr->add_flag("--no-commonsense", tr.no_commonsense, "Disable knowledge paths");
  s_tr->add_option("--batch-size", tr.train_cfg.batch_size, "Examples per step")->check(CLI::PositiveNumber);
  s_tr->add_option("--lr", tr.train_cfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  s_tr->add_option("--beta1", tr.train_cfg.beta1, "Adam beta1");
  s_tr->add_option("--beta2", tr.train_cfg.beta2, "Adam beta2");
  s_tr->add_option("--epsilon", tr.train_cfg.epsilon, "Adam epsilon");
  s_tr->add_option("--clip-norm", tr.train_cfg.clip_norm, "Global gradient norm limit (0 disables)");
  s_tr->add_option("--epochs", tr.train_cfg.epochs, "Training epochs");
  s_tr->add_option("--warmup", tr.train_cfg.warmup, "KL warmup steps");
  s_tr->add_option("--topic-weight", tr.train_cfg.topic_weight, "Weight of the topic loss");
  s_tr->add_option("--mask-rate", tr.train_cfg.mask_rate, "Problem-encoder token masking rate");
  s_tr->add_option("--delete-rate", tr.train_cfg.delete_rate, "Problem-encoder token deletion rate");
  s_tr->add_option("--max-steps", tr.train_cfg.max_steps, "Stop after this many steps (0: no limit)");
  s_tr->add_option("--dev-limit", tr.train_cfg.dev_limit, "Dev examples decoded per epoch (0: all)");
  s_tr->add_option("--seed", tr.train_cfg.seed, "Random seed for data order and noise")->required();
  s_tr->add_option("--init-seed", tr.model.seed, "Random seed for parameter initialization");

  GenerateArgs gen;
  auto* s_gen = app.add_subcommand("generate", "Checkpoint + equations -> generated problems (JSONL)");
  common(s_gen);
  s_gen->add_option("--checkpoint", gen.checkpoint, "Model checkpoint")->required();
  s_gen->add_option("--input", gen.input, "JSONL with id and equations")->required();
  s_gen->add_option("--beam", gen.beam, "Beam width (1 is greedy)")->check(CLI::PositiveNumber);
  s_gen->add_flag("--sample", gen.sample, "Sample the latent instead of using its mean");
  s_gen->add_option("--seed", gen.seed, "Seed for latent sampling");
  s_gen->add_option("--max-length", gen.max_length, "Decoding limit (0: model setting)");
  s_gen->add_flag("--copies", gen.copies, "Record copy provenance per output");

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "Candidates + references -> metric report");
  common(s_ev);
  s_ev->add_option("--candidates", ev.candidates, "JSONL with id and generated (or problem)")->required();
  s_ev->add_option("--references", ev.references, "JSONL with id and problem")->required();
  s_ev->add_option("--recall-denominator", ev.recall_denominator, "Numbers recalled from: reference or equation")
      ->check(CLI::IsMember({"reference", "equation"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kUsageError;
  }

  auto* sub = app.get_subcommands().front();
  Run run(*sub, out_dir, out, err, verbosity);
  try {
    if (sub == s_pre) preprocess(run, pre);
    if (sub == s_lda) lda_fit_command(run, lda);
    if (sub == s_kg) kg_pretrain(run, kg);
    if (sub == s_tr) train_command(run, tr);
    if (sub == s_gen) generate_command(run, gen);
    if (sub == s_ev) evaluate_command(run, ev);
    run.finish();
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return 0;
}

}  // namespace mwpgen::cli

#pragma once

// Raw record ingestion, preprocessing into training examples, number
// alignment for the copy mechanism, and problem-text corruption.

#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mwpgen/equation.hpp"
#include "mwpgen/text.hpp"

namespace mwpgen {

class DataError : public Error {
 public:
  using Error::Error;
};

struct RawRecord {
  std::string id;
  std::vector<std::string> equations;
  std::string problem;
  std::size_t line = 0;
};

// problem position -> equation position
using CopyAlignment = std::map<std::size_t, std::size_t>;

struct TrainingExample {
  std::string id;
  std::vector<std::string> equation_text;  // variable-normalized
  EquationSequence equations;
  std::vector<std::string> problem;
  int topic_id = 0;  // 1-based once assigned, 0 until then
  CopyAlignment copy_alignment;
};

struct MalformedRecord {
  std::size_t line;
  std::string reason;
};

struct RawReadResult {
  std::vector<RawRecord> records;
  std::vector<MalformedRecord> malformed;
};

// JSON lines: {"equations": [text, ...], "problem": text, optional "id"}.
inline RawReadResult read_raw_jsonl(std::istream& in) {
  RawReadResult out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      RawRecord r;
      r.line = n;
      if (!j.is_object() || !j.contains("equations") || !j.contains("problem"))
        throw DataError("missing 'equations' or 'problem'");
      for (const auto& e : j.at("equations")) r.equations.push_back(e.get<std::string>());
      r.problem = j.at("problem").get<std::string>();
      if (j.contains("id"))
        r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
      else
        r.id = std::to_string(n);
      if (r.equations.empty() || r.problem.empty()) throw DataError("empty equations or problem");
      out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      out.malformed.push_back({n, e.what()});
    }
  }
  return out;
}

inline RawReadResult read_raw_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_raw_jsonl(in);
}

// Each problem numeral whose canonical value equals an equation number is
// linked to the first equation position holding that value.
inline CopyAlignment align_numbers(const EquationSequence& eq, const std::vector<std::string>& problem) {
  std::map<std::string, std::size_t> first;
  for (std::size_t i = 0; i < eq.tokens.size(); ++i)
    if (eq.tokens[i].value) first.emplace(*eq.tokens[i].value, i);
  CopyAlignment out;
  for (std::size_t p = 0; p < problem.size(); ++p) {
    auto v = canonical_number(problem[p]);
    if (!v) continue;
    if (auto it = first.find(*v); it != first.end()) out.emplace(p, it->second);
  }
  return out;
}

struct PreprocessOptions {
  std::size_t max_problem_tokens = 45;
  std::size_t min_freq = 2;
};

struct PreprocessReport {
  std::size_t read = 0;
  std::size_t kept = 0;
  std::size_t dropped_long = 0;
  std::vector<MalformedRecord> malformed;
  double unk_rate = 0.0;

  std::string summary() const {
    std::ostringstream os;
    os << "records read: " << read + malformed.size() << "\n"
       << "kept: " << kept << "\n"
       << "dropped (problem too long): " << dropped_long << "\n"
       << "malformed: " << malformed.size() << "\n";
    for (const auto& m : malformed) os << "  line " << m.line << ": " << m.reason << "\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "unk rate: " << unk_rate << "\n";
    return os.str();
  }
};

struct PreprocessResult {
  std::vector<TrainingExample> examples;
  PreprocessReport report;
};

inline TrainingExample make_example(const RawRecord& r) {
  TrainingExample ex;
  ex.id = r.id;
  ex.equation_text = normalize_variables(r.equations);
  ex.equations = tokenize_equations(ex.equation_text);
  ex.problem = tokenize_problem(r.problem);
  ex.copy_alignment = align_numbers(ex.equations, ex.problem);
  return ex;
}

inline PreprocessResult preprocess_dataset(const std::vector<RawRecord>& records,
                                           const PreprocessOptions& opt = {}) {
  PreprocessResult out;
  for (const auto& r : records) {
    ++out.report.read;
    TrainingExample ex;
    try {
      ex = make_example(r);
    } catch (const Error& e) {
      --out.report.read;
      out.report.malformed.push_back({r.line, e.what()});
      continue;
    }
    if (ex.problem.empty()) {
      --out.report.read;
      out.report.malformed.push_back({r.line, "problem has no tokens"});
      continue;
    }
    if (ex.problem.size() > opt.max_problem_tokens) {
      ++out.report.dropped_long;
      continue;
    }
    out.examples.push_back(std::move(ex));
  }
  out.report.kept = out.examples.size();
  if (!out.examples.empty()) {
    std::vector<std::vector<std::string>> corpus;
    for (const auto& ex : out.examples) corpus.push_back(ex.problem);
    const auto vocab = build_vocab(corpus, opt.min_freq);
    std::size_t unk = 0, total = 0;
    for (const auto& doc : corpus)
      for (const auto& t : doc) unk += vocab.id(t) == Vocabulary::kUnk, ++total;
    out.report.unk_rate = total ? double(unk) / double(total) : 0.0;
  }
  return out;
}

// Masks each position (replacing it with <unk>) with probability mask_rate,
// then drops each position with probability delete_rate. At least one token
// always survives. Rates at or above 1 are capped to 0.99.
inline std::vector<std::string> corrupt_problem(const std::vector<std::string>& problem,
                                                double mask_rate, double delete_rate,
                                                std::mt19937_64& rng) {
  if (mask_rate < 0 || delete_rate < 0) throw Error("corruption rates must be nonnegative");
  mask_rate = std::min(mask_rate, 0.99);
  delete_rate = std::min(delete_rate, 0.99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::string> out;
  std::string first_kept;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    const bool masked = u(rng) < mask_rate;
    const bool deleted = u(rng) < delete_rate;
    std::string tok = masked ? std::string(Vocabulary::kReservedNames[Vocabulary::kUnk]) : problem[i];
    if (i == 0) first_kept = tok;
    if (!deleted) out.push_back(std::move(tok));
  }
  if (out.empty() && !problem.empty()) out.push_back(first_kept);
  return out;
}

// ---- processed example files ----------------------------------------------

inline nlohmann::json example_to_json(const TrainingExample& ex) {
  nlohmann::json j;
  j["id"] = ex.id;
  j["equations"] = ex.equation_text;
  j["problem"] = ex.problem;
  if (ex.topic_id > 0) j["topic"] = ex.topic_id;
  auto copy = nlohmann::json::array();
  for (auto [p, e] : ex.copy_alignment) copy.push_back({p, e});
  j["copy"] = copy;
  return j;
}

inline TrainingExample example_from_json(const nlohmann::json& j) {
  TrainingExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.equation_text = j.at("equations").get<std::vector<std::string>>();
  ex.equations = tokenize_equations(ex.equation_text);
  ex.problem = j.at("problem").get<std::vector<std::string>>();
  ex.topic_id = j.value("topic", 0);
  ex.copy_alignment = align_numbers(ex.equations, ex.problem);
  return ex;
}

inline void write_examples(const std::string& path, const std::vector<TrainingExample>& examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& ex : examples) out << example_to_json(ex).dump() << "\n";
}

inline std::vector<TrainingExample> read_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mwpgen

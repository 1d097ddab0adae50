#pragma once

// Drives the command-line entry point in-process for the CLI and acceptance tests.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mwpgen/cli.hpp"

namespace pipeline {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

inline Result cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"mwpgen"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = mwpgen::cli::run(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

inline fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mwpgen_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string data_file(const std::string& name) { return std::string(MWPGEN_DATA_DIR) + "/" + name; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

inline std::string first_lines(const std::string& path, std::size_t n) {
  std::ifstream in(path);
  std::string line, out;
  for (std::size_t i = 0; i < n && std::getline(in, line); ++i) out += line + "\n";
  return out;
}

struct Toy {
  fs::path root;
  std::vector<std::pair<std::string, Result>> steps;

  bool ok() const {
    for (const auto& [name, r] : steps)
      if (r.code != 0) return false;
    return true;
  }

  std::string failure() const {
    for (const auto& [name, r] : steps)
      if (r.code != 0) return name + " exited " + std::to_string(r.code) + ": " + r.err;
    return {};
  }
};

// preprocess -> lda-fit -> kg-pretrain -> train -> generate -> evaluate on the
// first ten sample problems.
inline Toy toy_pipeline(const fs::path& root, const std::string& seed = "7") {
  Toy t;
  t.root = root;
  const auto p = [&](const std::string& sub) { return (root / sub).string(); };
  write(root / "raw.jsonl", first_lines(data_file("sample_problems.jsonl"), 10));
  auto step = [&](const std::string& name, const std::vector<std::string>& args) {
    if (!t.ok()) return;
    t.steps.emplace_back(name, cli(args));
  };
  step("preprocess", {"preprocess", "--input", p("raw.jsonl"), "--dev-percent", "0", "--out-dir", p("pre")});
  step("lda-fit", {"lda-fit", "--input", p("pre/train.jsonl"), "--topics", "3", "--iterations", "30", "--keywords",
                   "5", "--seed", seed, "--out-dir", p("lda")});
  step("kg-pretrain", {"kg-pretrain", "--graph", data_file("sample_conceptnet.tsv"), "--vocab",
                       p("pre/examples.jsonl"), "--dim", "8", "--epochs", "3", "--seed", seed, "--out-dir", p("kg")});
  step("train", {"train", "--train", p("lda/train.topics.jsonl"), "--lda", p("lda/lda.bin"), "--graph",
                 p("kg/graph.bin"), "--dim", "8", "--keywords", "5", "--min-freq", "1", "--epochs", "2",
                 "--batch-size", "4", "--seed", seed, "--out-dir", p("train")});
  step("generate", {"generate", "--checkpoint", p("train/best.ckpt"), "--input", p("pre/train.jsonl"), "--out-dir",
                    p("gen")});
  step("evaluate", {"evaluate", "--candidates", p("gen/generated.jsonl"), "--references", p("pre/train.jsonl"),
                    "--out-dir", p("eval")});
  return t;
}

}  // namespace pipeline

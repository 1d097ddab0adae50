#include <gtest/gtest.h>

#include <chrono>

#include "json.hpp"
#include "pipeline.hpp"

using pipeline::cli;
using pipeline::slurp;
using pipeline::write;
namespace fs = std::filesystem;

namespace {

std::string words(std::size_t n) {
  std::string s;
  static const char* pool[] = {"apples", "cost", "more", "than", "pears", "at", "the", "market"};
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + std::string(pool[i % 8]);
  return s;
}

std::string raw_line(const std::string& id, const std::string& eq, const std::string& problem) {
  return nlohmann::json{{"id", id}, {"equations", {eq}}, {"problem", problem}}.dump() + "\n";
}

}  // namespace

TEST(Cli, EvaluateCandidateEqualsReference) {
  auto dir = pipeline::scratch("cli_eval");
  const auto refs = (dir / "refs.jsonl").string();
  write(refs, raw_line("a", "4*(x-y)=800", "a plane flies 800 miles in 4 hours .") +
                  raw_line("b", "x+y=12", "two numbers sum to 12 ."));
  auto r = cli({"evaluate", "--candidates", refs, "--references", refs, "--out-dir", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = nlohmann::json::parse(slurp(dir / "out/metrics.json"));
  EXPECT_DOUBLE_EQ(m["bleu2"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(m["rouge_l"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(m["number_recall"].get<double>(), 1.0);
}

TEST(Cli, PreprocessReportsDroppedLongProblem) {
  auto dir = pipeline::scratch("cli_pre");
  const auto raw = (dir / "raw.jsonl").string();
  write(raw, raw_line("long", "x=3", words(46)) + raw_line("ok", "x=3", words(45)));
  auto r = cli({"preprocess", "--input", raw, "--out-dir", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = nlohmann::json::parse(slurp(dir / "out/preprocess_report.json"));
  EXPECT_EQ(rep["dropped_long"], 1);
  EXPECT_EQ(rep["kept"], 1);
}

TEST(Cli, ToyPipelineCompletesWithinBudget) {
  const auto start = std::chrono::steady_clock::now();
  auto t = pipeline::toy_pipeline(pipeline::scratch("cli_toy"));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(t.ok()) << t.failure();
  EXPECT_LT(seconds, 300.0);
  std::ifstream gen(t.root / "gen/generated.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(gen, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("id") && j.contains("equations") && j.contains("generated"));
    ++n;
  }
  EXPECT_EQ(n, 10u);
  auto m = nlohmann::json::parse(slurp(t.root / "eval/metrics.json"));
  EXPECT_EQ(m["examples"].size(), 10u);
  auto manifest = nlohmann::json::parse(slurp(t.root / "train/manifest.json"));
  EXPECT_EQ(manifest["subcommand"], "train");
  EXPECT_EQ(manifest["config"]["seed"], "7");
  EXPECT_EQ(manifest["versions"]["mwpgen"], std::string(mwpgen::cli::kVersion));
  for (const auto& [path, sum] : manifest["inputs"].items())
    EXPECT_EQ(sum["fnv1a64"], mwpgen::cli::checksum_file(path));
  auto log = slurp(t.root / "train/train.log");
  EXPECT_EQ(log.rfind("# train started ", 0), 0u);
}

TEST(Cli, SubcommandsAreIdempotent) {
  auto a = pipeline::toy_pipeline(pipeline::scratch("cli_idem_a"));
  auto b = pipeline::toy_pipeline(pipeline::scratch("cli_idem_b"));
  ASSERT_TRUE(a.ok() && b.ok()) << a.failure() << b.failure();
  for (const char* f : {"pre/examples.jsonl", "pre/preprocess_report.json", "lda/lda.bin", "lda/train.topics.jsonl",
                        "kg/graph.bin", "train/loss.csv", "train/best.ckpt", "train/last.ckpt",
                        "train/train_summary.json", "gen/generated.jsonl", "eval/metrics.json"})
    EXPECT_EQ(slurp(a.root / f), slurp(b.root / f)) << f;
}

TEST(Cli, HelpListsEveryOptionWithDefault) {
  const std::map<std::string, std::vector<std::string>> expected = {
      {"preprocess", {"--max-tokens", "45", "--min-freq", "2", "--dev-percent", "10"}},
      {"lda-fit", {"--topics", "--iterations", "--alpha", "--beta", "--keywords", "--infer-sweeps", "--seed"}},
      {"kg-pretrain", {"--dim", "--layers", "--heads", "--epochs", "--edges-per-step", "--lr", "--seed"}},
      {"train", {"--batch-size", "32", "--lr", "0.0005", "--epochs", "30", "--warmup", "2000", "--clip-norm", "5",
                 "--path-alpha", "0.7", "--topic-weight", "0.5", "--seed"}},
      {"generate", {"--beam", "--sample", "--seed", "--max-length", "--copies"}},
      {"evaluate", {"--recall-denominator", "reference"}}};
  for (const auto& [sub, needles] : expected) {
    auto r = cli({sub, "--help"});
    EXPECT_EQ(r.code, 0);
    for (const auto& n : needles) EXPECT_NE(r.out.find(n), std::string::npos) << sub << " help lacks " << n;
    EXPECT_NE(r.out.find("--config"), std::string::npos);
  }
  auto r = cli({"train", "--help"});
  std::istringstream lines(r.out);
  std::string line;
  for (std::size_t shown = 0; std::getline(lines, line);) {
    if (line.find("--") == std::string::npos || line.find("--help") != std::string::npos ||
        line.find("--config") != std::string::npos || line.find("REQUIRED") != std::string::npos)
      continue;
    if (line.find("[Option") != std::string::npos) continue;
    if (line.find(" INT") != std::string::npos || line.find(" FLOAT") != std::string::npos ||
        line.find(" UINT") != std::string::npos)
      EXPECT_NE(line.find('['), std::string::npos) << "no default shown: " << line;
    ++shown;
  }
}

TEST(Cli, ExitCodes) {
  auto dir = pipeline::scratch("cli_exit");
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"nonsense"}).code, 1);
  EXPECT_EQ(cli({"lda-fit", "--input", "x.jsonl", "--out-dir", dir.string()}).code, 1);
  EXPECT_EQ(cli({"train", "--train", "t.jsonl", "--seed", "1", "--batch-size", "zero", "--out-dir", dir.string()}).code,
            1);
  EXPECT_EQ(cli({"preprocess", "--input", (dir / "missing.jsonl").string(), "--out-dir", dir.string()}).code, 2);
  write(dir / "bad.jsonl", "{\"id\": \"a\"}\n");
  EXPECT_EQ(cli({"generate", "--checkpoint", (dir / "bad.jsonl").string(), "--input", (dir / "bad.jsonl").string(),
                 "--out-dir", dir.string()})
                .code,
            2);
  EXPECT_EQ(cli({"--version"}).code, 0);
}

TEST(Cli, ConfigFileAppliesAndFlagsWin) {
  auto dir = pipeline::scratch("cli_config");
  const auto refs = (dir / "refs.jsonl").string();
  write(refs, raw_line("a", "x+y=12", "two numbers sum to 12 ."));
  write(dir / "ev.json", "{\"recall-denominator\": \"equation\"}");
  write(dir / "ev.ini", "# comment\nrecall-denominator=equation\n");
  for (const char* cfg : {"ev.json", "ev.ini"}) {
    auto out = dir / (std::string(cfg) + ".out");
    auto r = cli({"evaluate", "--config", (dir / cfg).string(), "--candidates", refs, "--references", refs,
                  "--out-dir", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(slurp(out / "metrics.json"))["number_recall_denominator"], "equation");
  }
  auto out = dir / "flag.out";
  auto r = cli({"evaluate", "--config", (dir / "ev.json").string(), "--recall-denominator", "reference",
                "--candidates", refs, "--references", refs, "--out-dir", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(out / "metrics.json"))["number_recall_denominator"], "reference");
  auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["config"]["recall-denominator"], "reference");
}

TEST(Cli, ConfigFileRejectsUnknownKeys) {
  auto dir = pipeline::scratch("cli_config_bad");
  const auto refs = (dir / "refs.jsonl").string();
  write(refs, raw_line("a", "x+y=12", "two numbers sum to 12 ."));
  write(dir / "bad.ini", "bogus=3\n");
  write(dir / "bad.json", "{\"epochs\": 2}");
  for (const char* cfg : {"bad.ini", "bad.json"})
    EXPECT_EQ(cli({"evaluate", "--config", (dir / cfg).string(), "--candidates", refs, "--references", refs,
                   "--out-dir", (dir / "out").string()})
                  .code,
              1)
        << cfg;
  EXPECT_FALSE(fs::exists(dir / "out/metrics.json"));
}

TEST(Cli, SeedIsMandatoryForStochasticSubcommands) {
  auto dir = pipeline::scratch("cli_seed");
  write(dir / "x.jsonl", "");
  for (const auto& sub : {"lda-fit", "train"}) {
    auto r = cli({sub, sub == std::string("train") ? "--train" : "--input", (dir / "x.jsonl").string(), "--out-dir",
                  dir.string()});
    EXPECT_EQ(r.code, 1) << sub;
  }
  EXPECT_EQ(cli({"kg-pretrain", "--graph", pipeline::data_file("sample_conceptnet.tsv"), "--out-dir", dir.string()})
                .code,
            1);
}

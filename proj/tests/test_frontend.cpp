#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mwpgen/dataset.hpp"
#include "mwpgen/equation.hpp"
#include "mwpgen/text.hpp"

using namespace mwpgen;

namespace {

std::vector<std::string> surfaces(const EquationSequence& s) {
  std::vector<std::string> out;
  for (const auto& t : s.tokens) out.push_back(t.surface);
  return out;
}

// Random well-formed equation text over the legal alphabet.
std::string random_equation(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 5), coin(0, 3), num(0, 2000);
  const char* vars = "xyz";
  const char* ops = "+-*/";
  auto operand = [&]() -> std::string {
    if (coin(rng) == 0) return std::string(1, vars[coin(rng) % 3]);
    const int v = num(rng);
    if (coin(rng) == 1) return std::to_string(v / 100) + "." + std::to_string(v % 100);
    return std::to_string(v);
  };
  std::string lhs = operand();
  for (int i = len(rng); i > 0; --i) {
    std::string rhs = operand();
    if (coin(rng) == 2) rhs = "(" + rhs + ops[coin(rng)] + operand() + ")";
    lhs += ops[coin(rng)] + rhs;
  }
  return lhs + "=" + operand();
}

}  // namespace

TEST(Tokenize, HalfAndThreeTenths) {
  auto s = tokenize_equation("0.5*x+0.3*y=10");
  ASSERT_EQ(s.size(), 9u);
  EXPECT_EQ(s.tokens[0].surface, "0.5");
  EXPECT_EQ(s.tokens[0].kind, TokenKind::kNumber);
  EXPECT_EQ(*s.tokens[0].value, "0.5");
  EXPECT_EQ(s.tokens[1].kind, TokenKind::kOperator);
  EXPECT_EQ(s.tokens[2].kind, TokenKind::kVariable);
  EXPECT_EQ(s.masked, (std::vector<std::string>{"[M]", "*", "x", "+", "[M]", "*", "y", "=", "[M]"}));
  EXPECT_EQ(s.number_positions(), (std::vector<std::size_t>{0, 4, 8}));
}

TEST(Tokenize, NoNumbersTemplateIsIdentical) {
  auto s = tokenize_equation("x=y");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.masked, surfaces(s));
  EXPECT_EQ(s.tokens[1].kind, TokenKind::kOperator);
}

TEST(Tokenize, ParenthesizedDistance) {
  auto s = tokenize_equation("4*(x-y)=800");
  ASSERT_EQ(s.size(), 9u);
  auto pos = s.number_positions();
  ASSERT_EQ(pos.size(), 2u);
  EXPECT_EQ(*s.tokens[pos[0]].value, "4");
  EXPECT_EQ(*s.tokens[pos[1]].value, "800");
}

TEST(Tokenize, Errors) {
  EXPECT_THROW(tokenize_equation(""), ParseError);
  EXPECT_THROW(tokenize_equation("   "), ParseError);
  EXPECT_THROW(tokenize_equation("x=$5"), ParseError);
  EXPECT_THROW(tokenize_equation("(x+1=2"), ParseError);
  EXPECT_THROW(tokenize_equation("x+1)=2"), ParseError);
}

TEST(Tokenize, KindInvariantHolds) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    auto s = tokenize_equation(random_equation(rng));
    for (const auto& t : s.tokens) {
      EXPECT_EQ(t.kind == TokenKind::kNumber, t.value.has_value());
      if (t.kind == TokenKind::kOperator) EXPECT_NE(std::string("+-*/^=()").find(t.surface), std::string::npos);
    }
  }
}

TEST(Tokenize, RoundTripAndTemplateInvariance) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const auto raw = random_equation(rng);
    auto s = tokenize_equation(raw);
    auto back = detokenize(s);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(surfaces(tokenize_equation(back[0])), surfaces(s)) << raw;
    EXPECT_EQ(surfaces(tokenize_equation(mask_numbers(raw))), s.masked) << raw;
    ASSERT_EQ(s.masked.size(), s.size());
    for (std::size_t k = 0; k < s.size(); ++k)
      if (!s.tokens[k].is_number()) EXPECT_EQ(s.masked[k], s.tokens[k].surface);
  }
}

TEST(Tokenize, EquationSetBoundaries) {
  auto s = tokenize_equations({"x+y=10", "x-y=2"});
  EXPECT_EQ(s.boundaries, (std::vector<std::size_t>{5, 10}));
  EXPECT_EQ(detokenize(s), (std::vector<std::string>{"x+y=10", "x-y=2"}));
}

TEST(NormalizeVariables, RenamesInFirstAppearanceOrder) {
  EXPECT_EQ(normalize_variables({"u+v+r=100", "u-r=10"}),
            (std::vector<std::string>{"x+y+z=100", "x-z=10"}));
  EXPECT_EQ(normalize_variables({"x=5"}), (std::vector<std::string>{"x=5"}));
  EXPECT_EQ(normalize_variables({"b=a+1"}), (std::vector<std::string>{"x=y+1"}));
}

TEST(NormalizeVariables, Errors) {
  EXPECT_THROW(normalize_variables({"a+b+c+d=1"}), Error);
  EXPECT_THROW(normalize_variables({"ab=1"}), Error);
}

TEST(NormalizeVariables, Idempotent) {
  std::mt19937_64 rng(5);
  const std::string letters = "abcdefghijklmnopqrstuvw";
  for (int i = 0; i < 200; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, letters.size() - 1);
    std::string v[3] = {std::string(1, letters[pick(rng)]), std::string(1, letters[pick(rng)]),
                        std::string(1, letters[pick(rng)])};
    std::vector<std::string> eqs = {v[0] + "+" + v[1] + "=12", v[2] + "-" + v[0] + "=3"};
    auto once = normalize_variables(eqs);
    EXPECT_EQ(normalize_variables(once), once);
  }
}

TEST(ProblemText, TokenizeCanonicalizesNumbers) {
  EXPECT_EQ(tokenize_problem("A train goes 800 Miles in 4 hrs."),
            (std::vector<std::string>{"a", "train", "goes", "800", "miles", "in", "4", "hrs", "."}));
  EXPECT_EQ(tokenize_problem("It costs $1,000.50, doesn't it?"),
            (std::vector<std::string>{"it", "costs", "$", "1000.5", ",", "doesn't", "it", "?"}));
  EXPECT_EQ(tokenize_problem("10% of 0.50"), (std::vector<std::string>{"10", "%", "of", "0.5"}));
}

TEST(Vocab, MinFrequencyMapsRareWordsToUnk) {
  auto v = build_vocab({{"the", "apple", "the"}, {"pear", "pear", "the"}}, 2);
  EXPECT_EQ(v.id("apple"), Vocabulary::kUnk);
  EXPECT_NE(v.id("pear"), Vocabulary::kUnk);
  EXPECT_EQ(v.token(Vocabulary::kReserved), "the");
  EXPECT_EQ(v.size(), Vocabulary::kReserved + 2);
}

TEST(Vocab, SingleRepeatedToken) {
  auto v = build_vocab({{"a", "a", "a", "a", "a"}}, 2);
  EXPECT_EQ(v.size(), Vocabulary::kReserved + 1);
  EXPECT_THROW(build_vocab({}, 2), Error);
}

TEST(Vocab, RoundTripAndBijective) {
  auto v = build_vocab({{"b", "a", "c", "a", "b", "d"}}, 1);
  auto back = Vocabulary::deserialize(v.serialize());
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.hash(), v.hash());
  for (std::size_t i = Vocabulary::kReserved; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
}

TEST(Align, Distance) {
  auto eq = tokenize_equation("4*(x-y)=800");
  auto problem = tokenize_problem("a plane flies 800 miles in 4 hrs against the wind");
  auto a = align_numbers(eq, problem);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a.at(3), 8u);
  EXPECT_EQ(a.at(6), 0u);
}

TEST(Align, NoNumbersAndPercent) {
  EXPECT_TRUE(align_numbers(tokenize_equation("x=10"), tokenize_problem("no numbers here")).empty());
  auto eq = tokenize_equation("0.1*x=10");
  auto problem = tokenize_problem("10% of a number is ten");
  auto a = align_numbers(eq, problem);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a.at(0), 4u);
}

TEST(Align, TargetsAreNumbersWithEqualValue) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    auto eq = tokenize_equation(random_equation(rng));
    std::vector<std::string> problem = {"we", "have"};
    for (const auto& t : eq.tokens)
      if (t.value) problem.push_back(*t.value), problem.push_back("and");
    problem.push_back("0.50");
    for (auto [p, e] : align_numbers(eq, problem)) {
      ASSERT_TRUE(eq.tokens[e].is_number());
      EXPECT_EQ(*eq.tokens[e].value, *canonical_number(problem[p]));
    }
  }
}

namespace {
std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + std::string(1 + i % 4, char('a' + i % 26));
  return s;
}
}  // namespace

TEST(Preprocess, LengthLimitIsInclusive) {
  std::vector<RawRecord> recs = {{"a", {"x=1"}, words(45), 1}, {"b", {"x=2"}, words(46), 2}};
  auto r = preprocess_dataset(recs);
  ASSERT_EQ(r.examples.size(), 1u);
  EXPECT_EQ(r.examples[0].id, "a");
  EXPECT_EQ(r.report.dropped_long, 1u);
  EXPECT_EQ(r.report.kept, 1u);
}

TEST(Preprocess, MalformedRecordsAreCountedWithLine) {
  std::istringstream in(
      "{\"equations\":[\"u+v=10\"],\"problem\":\"two numbers sum to 10\",\"id\":\"p1\"}\n"
      "not json\n"
      "{\"equations\":[],\"problem\":\"x\"}\n"
      "{\"equations\":[\"x=$\"],\"problem\":\"bad\"}\n");
  auto raw = read_raw_jsonl(in);
  EXPECT_EQ(raw.records.size(), 2u);
  ASSERT_EQ(raw.malformed.size(), 2u);
  EXPECT_EQ(raw.malformed[0].line, 2u);
  auto r = preprocess_dataset(raw.records);
  ASSERT_EQ(r.examples.size(), 1u);
  ASSERT_EQ(r.report.malformed.size(), 1u);
  EXPECT_EQ(r.report.malformed[0].line, 4u);
  EXPECT_EQ(r.examples[0].equation_text, (std::vector<std::string>{"x+y=10"}));
  EXPECT_EQ(r.examples[0].copy_alignment.size(), 1u);
}

TEST(Preprocess, ExampleJsonRoundTrip) {
  auto ex = make_example({"id7", {"4*(a-b)=800"}, "It flies 800 miles in 4 hours.", 1});
  ex.topic_id = 3;
  auto back = example_from_json(example_to_json(ex));
  EXPECT_EQ(back.id, ex.id);
  EXPECT_EQ(back.equation_text, ex.equation_text);
  EXPECT_EQ(back.problem, ex.problem);
  EXPECT_EQ(back.topic_id, 3);
  EXPECT_EQ(back.copy_alignment, ex.copy_alignment);
}

TEST(Corrupt, ZeroRatesIsIdentity) {
  std::mt19937_64 rng(1);
  std::vector<std::string> p = {"a", "b", "c"};
  EXPECT_EQ(corrupt_problem(p, 0.0, 0.0, rng), p);
}

TEST(Corrupt, FullMaskNearlyEverywhere) {
  std::mt19937_64 rng(42);
  std::vector<std::string> p(100, "w");
  auto out = corrupt_problem(p, 1.0, 0.0, rng);
  ASSERT_EQ(out.size(), 100u);
  const auto unks = std::count(out.begin(), out.end(), "<unk>");
  // Binomial(100, 0.99): mean 99, sd ~1.
  EXPECT_GE(unks, 95);
  EXPECT_LE(unks, 100);
}

TEST(Corrupt, FixedSeedIsReproducibleAndNeverEmpty) {
  std::vector<std::string> p = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  std::mt19937_64 r1(7), r2(7);
  auto a = corrupt_problem(p, 0.15, 0.10, r1);
  auto b = corrupt_problem(p, 0.15, 0.10, r2);
  EXPECT_EQ(a, b);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 r(seed);
    EXPECT_FALSE(corrupt_problem({"only"}, 0.5, 0.99, r).empty());
  }
  std::mt19937_64 r(0);
  EXPECT_THROW(corrupt_problem(p, -0.1, 0.0, r), Error);
}

#include <algorithm>
#include <map>

#include <gtest/gtest.h>

#include "thinkstate/supervision.hpp"
#include "oracles.hpp"

using namespace thinkstate;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::task_vocabulary();
  return v;
}

std::map<int, int> token_multiset(const std::vector<std::string>& steps) {
  return oracles::token_multiset(vocab(), steps);
}

using oracles::target_multiset;

const char* kPaperParity =
    "The coin starts at state heads.<T> Alice doesn't flip the coin.<T> Bob flips the coin.<T> "
    "Alice flips the coin.<T>";

}  // namespace

TEST(ParseIndicators, PaperParityQuery) {
  std::vector<std::string> steps = {"heads", "heads", "tails", "heads"};
  auto a = parse_indicators(vocab(), kPaperParity, steps);
  EXPECT_EQ(a.positions, (std::vector<std::size_t>{7, 13, 19, 25}));
  EXPECT_EQ(a.clean_text, strip_markers(kPaperParity));
  EXPECT_EQ(insert_markers(a.clean_text, a.char_offsets), kPaperParity);
  EXPECT_EQ(vocab().tokenize(a.clean_text), a.clean_ids);
  for (int t : a.clean_ids) EXPECT_NE(t, special::kIndicator);
}

TEST(ParseIndicators, NoMarkersAndMismatch) {
  auto a = parse_indicators(vocab(), "The coin starts at state heads.", {});
  EXPECT_TRUE(a.positions.empty());
  EXPECT_EQ(a.clean_ids, vocab().tokenize("The coin starts at state heads."));
  try {
    parse_indicators(vocab(), kPaperParity, {"heads"});
    FAIL();
  } catch (const AlignmentError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("4"), std::string::npos);
    EXPECT_NE(msg.find("1"), std::string::npos);
  }
}

TEST(ReasoningArray, ShiftAndConsecutive) {
  auto one = build_reasoning_array(10, {5}, {"x"});
  EXPECT_EQ(one.entries[4].value(), "x");
  auto two = build_reasoning_array(10, {5, 5}, {"x", "y"});
  EXPECT_EQ(two.entries[4].value(), "x");
  EXPECT_EQ(two.entries[5].value(), "y");
  EXPECT_THROW(build_reasoning_array(10, {0}, {"x"}), SupervisionError);
}

TEST(ReasoningArray, OverflowJoinsOntoLastSlot) {
  auto r = build_reasoning_array(3, {2, 3, 3}, {"a", "b", "c"});
  EXPECT_EQ(r.entries[1].value(), "a");
  EXPECT_EQ(r.entries[2].value(), "b<SEP>c");
  EXPECT_EQ(oracles::simulate_landing(3, {2, 3, 3}, {"a", "b", "c"})[2], "b<SEP>c");
}

TEST(ReasoningArray, MatchesReferenceSimulator) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 2000; ++t) {
    std::uniform_int_distribution<std::size_t> un(1, 30);
    const std::size_t n = un(rng);
    std::uniform_int_distribution<std::size_t> up(1, n), uk(0, 8);
    const std::size_t k = uk(rng);
    std::vector<std::size_t> pos(k);
    std::vector<std::string> steps(k);
    for (std::size_t j = 0; j < k; ++j) {
      pos[j] = up(rng);
      steps[j] = std::to_string(j % 10);
    }
    std::sort(pos.begin(), pos.end());
    auto r = build_reasoning_array(n, pos, steps);
    auto ref = oracles::simulate_landing(n, pos, steps);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(r.entries[i].value_or(""), ref[i]);
    for (std::size_t j = 0; j < k; ++j) {
      if (j > 0) ASSERT_GE(r.landing[j], r.landing[j - 1]);
    }
  }
}

TEST(ChunkTargets, PaperParityTargets) {
  std::vector<std::string> steps = {"heads", "heads", "tails", "heads"};
  auto a = parse_indicators(vocab(), kPaperParity, steps);
  auto arr = build_reasoning_array(a.clean_ids.size(), a.positions, steps);
  // Clause-per-chunk layout: one <PAD> in front brings every marker onto a
  // multiple of six.
  auto t = chunk_targets(vocab(), arr, 6, 32, 5);
  std::vector<std::string> rendered;
  for (auto& z : t) rendered.push_back(vocab().render_thought(z.ids));
  std::vector<std::string> nontrivial;
  for (auto& s : rendered)
    if (s != "<eos>") nontrivial.push_back(s);
  EXPECT_EQ(nontrivial,
            (std::vector<std::string>{"heads<eos>", "heads<eos>", "tails<eos>", "heads<eos>"}));
  EXPECT_EQ(rendered[1], "heads<eos>");  // chunk ending with the preamble
}

TEST(ChunkTargets, PaperVarsTargets) {
  const std::string text = "Track the variables values: a=1; b=2 a=a+b<T> b=b+a<T> b=b+3<T>";
  std::vector<std::string> steps = {"a=3", "b=5", "b=8"};
  auto a = parse_indicators(vocab(), text, steps);
  auto arr = build_reasoning_array(a.clean_ids.size(), a.positions, steps);
  const auto pad = alignment_padding(a, 5, true);
  auto t = chunk_targets(vocab(), arr, 5, 32, pad);
  std::vector<std::string> nontrivial;
  for (auto& z : t)
    if (!z.trivial()) nontrivial.push_back(vocab().render_thought(z.ids));
  EXPECT_EQ(nontrivial, (std::vector<std::string>{"a=3<eos>", "b=5<eos>", "b=8<eos>"}));
}

TEST(ChunkTargets, EmptyAndMergedChunks) {
  ReasoningArray arr;
  arr.entries.resize(8);
  auto t = chunk_targets(vocab(), arr, 4, 32);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_TRUE(t[0].trivial());
  arr.entries[1] = "heads";
  arr.entries[3] = "tails";
  t = chunk_targets(vocab(), arr, 4, 32);
  EXPECT_EQ(vocab().render_thought(t[0].ids), "heads tails<eos>");
  EXPECT_EQ(target_multiset(t), token_multiset({"heads", "tails"}));
  EXPECT_THROW(chunk_targets(vocab(), arr, 4, 2), SupervisionError);
}

TEST(Conservation, TenThousandSamplesPerTask) {
  for (const std::string task : {"parity", "vars"}) {
    TaskSpec spec;
    spec.task = task;
    const std::size_t c = task == "parity" ? 6 : 5;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      auto s = gen_task(spec, 1 + static_cast<int>(seed % 30), seed);
      auto a = parse_indicators(vocab(), s.text, s.steps);
      ASSERT_EQ(insert_markers(a.clean_text, a.char_offsets), s.text);
      // Tokenize-then-remove equals strip-then-tokenize.
      auto marked = vocab().tokenize(s.text);
      marked.erase(std::remove(marked.begin(), marked.end(), special::kIndicator), marked.end());
      ASSERT_EQ(marked, a.clean_ids);
      auto arr = build_reasoning_array(a.clean_ids.size(), a.positions, s.steps);
      for (std::size_t j = 0; j < s.steps.size(); ++j) {
        ASSERT_LE(arr.landing[j], a.raw_positions[j]);
        if (j) ASSERT_GE(arr.landing[j], arr.landing[j - 1]);
      }
      const auto pad = alignment_padding(a, c, true);
      auto t = chunk_targets(vocab(), arr, c, 32, pad);
      ASSERT_EQ(target_multiset(t), token_multiset(s.steps));
      // Aligned layout: exactly one non-trivial chunk per operation.
      std::size_t nontrivial = 0;
      for (auto& z : t) nontrivial += z.trivial() ? 0 : 1;
      ASSERT_EQ(nontrivial, s.steps.size());
    }
  }
}

TEST(Records, JsonRoundTrip) {
  auto s = gen_vars(4, 3, 11);
  auto r = to_record(s);
  auto back = record_from_json(record_to_json(r));
  EXPECT_EQ(back.text, r.text);
  EXPECT_EQ(back.steps, r.steps);
  EXPECT_EQ(back.answer, r.answer);
  EXPECT_EQ(back.task, "vars");
  EXPECT_EQ(back.n_ops, 4);
  EXPECT_EQ(back.seed, 11u);
  auto extra = record_from_json(
      R"({"text":"x","steps":[],"answer":"y","meta":{"task":"parity","n_ops":0,"seed":1,"z":2},"other":3})");
  EXPECT_EQ(extra.answer, "y");
}

TEST(Encoding, ThinkstateLayout) {
  ModelConfig cfg;
  cfg.chunk_size = 6;
  auto s = gen_parity(3, 4);
  auto e = encode_thinkstate(vocab(), to_record(s), cfg);
  EXPECT_EQ(e.n_pad, 5u);
  EXPECT_EQ(e.query_len % 6, 0u);
  EXPECT_EQ(e.gold.size(), e.tokens.size() / 6);
  EXPECT_EQ(e.tokens.back(), special::kEos);
  std::size_t masked = 0;
  for (bool b : e.mask) masked += b;
  EXPECT_EQ(masked, e.answer_ids.size() + 1);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(vocab().render_thought(e.gold[2 + i].ids), s.steps[i] + "<eos>");
  }
  auto plain = encode_plain(vocab(), to_record(s), true);
  EXPECT_EQ(vocab().detokenize(std::span<const int>(plain.tokens).subspan(plain.query_len,
                                                                          plain.tokens.size() - plain.query_len - 1)),
            s.cot);
}

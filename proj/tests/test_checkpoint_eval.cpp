#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "thinkstate/checkpoint.hpp"
#include "thinkstate/eval.hpp"

using namespace thinkstate;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::task_vocabulary();
  return v;
}

ModelConfig task_config() {
  auto cfg = thinkstate::testing::tiny_config(3, 6);
  cfg.vocab_size = vocab().size();
  cfg.max_think_len = 8;
  cfg.max_positions = 512;
  return cfg;
}

std::vector<Record> records(const std::string& task, std::size_t n, int lo, int hi,
                            std::uint64_t seed) {
  std::vector<Record> out;
  for (const auto& s : gen_dataset({task}, n, lo, hi, seed)) out.push_back(to_record(s));
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<std::string> texts(const EvalSummary& s) {
  std::vector<std::string> out;
  for (auto& p : s.predictions) out.push_back(p.generated + "|" + p.trace);
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  ThinkStateModel<float> m(task_config(), 5);
  const auto path = temp_path("ts_ckpt_roundtrip.bin");
  save_checkpoint(path, m, vocab(), "thinkstate");
  auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.mode, "thinkstate");
  EXPECT_EQ(ck.model.config(), m.config());
  EXPECT_TRUE(ck.model.has_thinking);
  EXPECT_EQ(ck.vocab.fingerprint(), vocab().fingerprint());
  auto a = m.parameters(), b = ck.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i]->shape(), b[i]->shape());
    EXPECT_EQ(0, std::memcmp(a[i]->data().data(), b[i]->data().data(),
                             a[i]->numel() * sizeof(float)));
  }
  // T and C still read the backbone's embedding after loading.
  EXPECT_TRUE(ck.model.think.embed.same_storage(ck.model.backbone.embed));
  EXPECT_TRUE(ck.model.comp.embed.same_storage(ck.model.backbone.embed));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RoundTripPreservesEvalResults) {
  ThinkStateModel<float> m(task_config(), 6);
  thinkstate::testing::rig_half_trivial(m, 3);
  const auto recs = records("parity", 12, 1, 6, 9);
  EvalOptions opt;
  opt.trace = true;
  const auto before = evaluate(m, vocab(), recs, opt);
  const auto path = temp_path("ts_ckpt_eval.bin");
  save_checkpoint(path, m, vocab(), "thinkstate");
  auto ck = load_checkpoint(path);
  const auto after = evaluate(ck.model, ck.vocab, recs, opt);
  EXPECT_EQ(texts(before), texts(after));
  EXPECT_EQ(before.all.correct, after.all.correct);
  std::filesystem::remove(path);
}

TEST(Checkpoint, PlainModelRoundTrip) {
  ThinkStateModel<float> m(task_config(), 7, false);
  const auto path = temp_path("ts_ckpt_plain.bin");
  save_checkpoint(path, m, vocab(), "nocot");
  auto ck = load_checkpoint(path);
  EXPECT_FALSE(ck.model.has_thinking);
  EXPECT_EQ(ck.model.parameter_count(), m.parameter_count());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto path = temp_path("ts_ckpt_bad.bin");
  {
    std::ofstream out(path);
    out << "not a checkpoint\n";
  }
  EXPECT_THROW(load_checkpoint(path), IoError);
  ThinkStateModel<float> m(task_config(), 8);
  save_checkpoint(path, m, vocab(), "thinkstate");
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 10);
  EXPECT_THROW(load_checkpoint(path), IoError);
  EXPECT_THROW(load_checkpoint(temp_path("ts_ckpt_missing.bin")), IoError);
  std::filesystem::remove(path);
}

TEST(Eval, AnswerSpan) {
  const auto& v = vocab();
  auto ids = v.tokenize("heads tails. heads");
  ids.push_back(special::kEos);
  EXPECT_EQ(v.detokenize(answer_span(v, ids, true)), "heads");
  EXPECT_EQ(answer_span(v, v.tokenize("heads tails"), true), std::vector<int>{});
  EXPECT_EQ(v.detokenize(answer_span(v, ids, false)), "heads tails. heads");
}

TEST(Eval, QueryIdsAlignFirstMarker) {
  const auto cfg = task_config();
  for (const auto& r : records("parity", 20, 1, 5, 10)) {
    const auto a = parse_indicators(vocab(), r.text, r.steps);
    const auto ids = query_ids(vocab(), r, cfg, true, true);
    const auto pad = ids.size() - a.clean_ids.size();
    EXPECT_EQ((pad + a.positions.front()) % cfg.chunk_size, 0u);
    EXPECT_EQ(query_ids(vocab(), r, cfg, false, true), vocab().tokenize(strip_markers(r.text)));
  }
}

TEST(Eval, SpeculativeAndSequentialAgree) {
  ThinkStateModel<float> m(task_config(), 9);
  thinkstate::testing::rig_half_trivial(m, 4);
  const auto recs = records("vars", 10, 1, 6, 11);
  EvalOptions seq, spec, lazy;
  seq.trace = spec.trace = lazy.trace = true;
  spec.speculative = true;
  lazy.speculative = lazy.lazy = true;
  const auto a = evaluate(m, vocab(), recs, seq);
  const auto b = evaluate(m, vocab(), recs, spec);
  const auto c = evaluate(m, vocab(), recs, lazy);
  EXPECT_EQ(texts(a), texts(b));
  EXPECT_EQ(texts(a), texts(c));
  for (std::size_t i = 0; i < recs.size(); ++i)
    EXPECT_EQ(b.predictions[i].stats.rounds, a.predictions[i].nontrivial + 1);
}

TEST(Eval, DeterministicAndBucketed) {
  ThinkStateModel<float> m(task_config(), 10);
  const auto recs = records("parity", 15, 1, 4, 12);
  EvalOptions opt;
  const auto a = evaluate(m, vocab(), recs, opt);
  const auto b = evaluate(m, vocab(), recs, opt);
  EXPECT_EQ(texts(a), texts(b));
  std::size_t n = 0;
  for (auto& [ops, bucket] : a.by_ops) {
    EXPECT_GE(ops, 1);
    EXPECT_LE(ops, 4);
    n += bucket.n;
  }
  EXPECT_EQ(n, recs.size());
  EXPECT_EQ(a.all.n, recs.size());
}

TEST(Eval, CorrectWhenModelEmitsTheAnswer) {
  // A record whose answer is what an untrained model happens to say grades
  // as correct; any other answer does not.
  ThinkStateModel<float> m(task_config(), 11, false);
  auto r = records("parity", 1, 2, 2, 13)[0];
  EvalOptions opt;
  opt.max_new = 4;
  auto p = predict(m, vocab(), r, opt);
  r.answer = p.text;
  EXPECT_TRUE(predict(m, vocab(), r, opt).correct);
  r.answer = p.text + " x";
  EXPECT_FALSE(predict(m, vocab(), r, opt).correct);
}

TEST(Eval, MedianHelper) {
  EXPECT_EQ(median({}), 0.0);
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

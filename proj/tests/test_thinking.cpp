#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "thinkstate/gradcheck.hpp"

using namespace thinkstate;
using namespace thinkstate::testing;

namespace {

Tensor random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  Tensor t({n, d});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

}  // namespace

TEST(ThoughtSequence, TrivialFlag) {
  EXPECT_TRUE(ThoughtSequence::empty().trivial());
  ThoughtSequence z{{7, special::kEosThink}};
  EXPECT_FALSE(z.trivial());
}

TEST(InitFromBackbone, CopiesAndAliasing) {
  ThinkStateModel<float> m(tiny_config(), 1);
  auto& bb = m.backbone;
  EXPECT_TRUE(m.think.embed.same_storage(bb.embed));
  EXPECT_TRUE(m.comp.embed.same_storage(bb.embed));
  EXPECT_EQ(&m.think.embed.row(7)[0], &bb.embed.row(7)[0]);
  EXPECT_EQ(m.think.layer.wq.values(), bb.layers.back().wq.values());
  EXPECT_EQ(m.comp.layer.wq.values(), bb.layers.front().wq.values());
  EXPECT_EQ(m.think.unembed.values(), bb.unembed.values());
  m.think.layer.wq[0] += 1.0f;
  m.think.unembed[0] += 1.0f;
  m.comp.layer.w_up[0] += 1.0f;
  EXPECT_NE(m.think.layer.wq[0], bb.layers.back().wq[0]);
  EXPECT_NE(m.think.unembed[0], bb.unembed[0]);
  EXPECT_NE(m.comp.layer.w_up[0], bb.layers.front().w_up[0]);
}

TEST(InitFromBackbone, CopyInitDiffersFromRandomInit) {
  std::mt19937_64 rng(2);
  ThinkStateModel<float> m(tiny_config(), 2);
  auto rnd = ThinkingBlock<float>::random(m.backbone, 99);
  auto h = random_rows(4, 16, rng);
  ThoughtSequence gold{{8, 9, special::kEosThink}};
  Graph<float> g(false);
  const float a = m.think.thought_loss(g, h, gold).item();
  const float b = rnd.thought_loss(g, h, gold).item();
  EXPECT_NE(a, b);
}

TEST(GenerateThought, TerminatesAndCaps) {
  std::mt19937_64 rng(3);
  ThinkStateModel<float> m(tiny_config(), 3);
  auto h = random_rows(4, 16, rng);
  auto z = m.think.generate_thought(h);
  ASSERT_FALSE(z.ids.empty());
  EXPECT_EQ(z.ids.back(), special::kEosThink);
  EXPECT_LE(z.size(), m.config().max_think_len);

  // A head that never scores <EOS_think> above the rest: all logits equal,
  // so the lowest id (<PAD>) always wins.
  for (auto& v : m.think.unembed.data()) v = 0.0f;
  auto capped = m.think.generate_thought(h);
  EXPECT_EQ(capped.size(), m.config().max_think_len);
  EXPECT_TRUE(capped.truncated);
  EXPECT_EQ(capped.ids.back(), special::kEosThink);
}

TEST(GenerateThought, EosFirstGivesTrivial) {
  ThinkStateModel<float> m(tiny_config(), 4);
  rig_always_trivial(m);
  std::mt19937_64 rng(4);
  auto ids = random_ids(4, 20, rng);
  Graph<float> g(false);
  auto cache = m.backbone.new_cache();
  auto out = m.backbone.forward(g, ids, cache);
  auto z = m.think.generate_thought(out.h_out);
  EXPECT_TRUE(z.trivial());
  EXPECT_EQ(z.size(), 1u);
}

TEST(ThoughtLoss, UniformHeadGivesLogV) {
  std::mt19937_64 rng(5);
  ThinkStateModel<float> m(tiny_config(), 5);
  for (auto& v : m.think.unembed.data()) v = 0.0f;
  Graph<float> g(false);
  auto loss = m.think.thought_loss(g, random_rows(4, 16, rng), ThoughtSequence::empty());
  EXPECT_NEAR(loss.item(), std::log(20.0), 1e-5);
}

TEST(ThoughtLoss, EqualsMeanOfPerPositionCE) {
  std::mt19937_64 rng(6);
  ThinkStateModel<double> m(tiny_config(), 6);
  BasicTensor<double> h({4, 16});
  std::normal_distribution<double> nd;
  for (auto& v : h.data()) v = nd(rng);
  ThoughtSequence gold{{9, 12, 7, special::kEosThink}};
  Graph<double> g(false);
  const double loss = m.think.thought_loss(g, h, gold).item();
  // Oracle: generate-style incremental logits, one position at a time.
  double sum = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    std::span<const int> prefix(gold.ids.data(), k);
    auto logits = m.think.context_logits(g, h, prefix);
    auto row = logits.row(logits.rows() - 1);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    sum += std::log(z) + mx - row[gold.ids[k]];
  }
  EXPECT_NEAR(loss, sum / gold.size(), 1e-10);
}

TEST(ThoughtLoss, GradientWrtHout) {
  std::mt19937_64 rng(7);
  ThinkStateModel<double> m(tiny_config(), 7);
  BasicTensor<double> h({4, 16});
  std::normal_distribution<double> nd;
  for (auto& v : h.data()) v = nd(rng);
  ThoughtSequence gold{{9, 12, special::kEosThink}};
  auto f = [&](Graph<double>& g) { return m.think.thought_loss(g, h, gold); };
  EXPECT_LE(grad_check<double>(f, {h}, 1e-4), 1e-3);
}

TEST(ThoughtLoss, RejectsOverlongGold) {
  ThinkStateModel<float> m(tiny_config(), 8);
  ThoughtSequence gold;
  gold.ids.assign(7, 9);
  gold.ids.push_back(special::kEosThink);
  Graph<float> g(false);
  EXPECT_THROW(m.think.thought_loss(g, Tensor({4, 16}), gold), SupervisionError);
}

TEST(TeacherForcing, MatchesGreedyGeneration) {
  // After emitting gold tokens 1..k, generation sees the same logits the
  // teacher-forced pass uses at position k.
  std::mt19937_64 rng(9);
  ThinkStateModel<float> m(tiny_config(), 9);
  auto h = random_rows(4, 16, rng);
  auto z = m.think.generate_thought(h);
  Graph<float> g(false);
  auto logits = m.think.teacher_forced_logits(g, h, z);
  const std::size_t emitted = z.size() - (z.truncated ? 1 : 0);
  for (std::size_t k = 0; k < emitted; ++k) EXPECT_EQ(decode_next<float>(logits.row(k)), z.ids[k]);
  for (std::size_t k = 0; k < z.size(); ++k) {
    auto ctx = m.think.context_logits(g, h, std::span<const int>(z.ids.data(), k));
    auto row = ctx.row(ctx.rows() - 1);
    for (std::size_t j = 0; j < 20; ++j) EXPECT_NEAR(row[j], logits.at(k, j), 1e-5);
  }
}

TEST(Compress, TrivialAndShapes) {
  ThinkStateModel<float> m(tiny_config(), 10);
  auto s0 = m.comp.compress(ThoughtSequence::empty());
  EXPECT_TRUE(s0.trivial);
  EXPECT_EQ(s0.values.shape(), (Shape{4, 16}));
  for (float v : s0.values.data()) EXPECT_EQ(v, 0.0f);

  ThoughtSequence shortz{{9, special::kEosThink}};
  ThoughtSequence longz{{9, 8, 7, 10, 11, special::kEosThink}};
  auto a = m.comp.compress(shortz), b = m.comp.compress(longz);
  EXPECT_FALSE(a.trivial);
  EXPECT_EQ(a.values.shape(), (Shape{4, 16}));
  EXPECT_EQ(b.values.shape(), (Shape{4, 16}));
  EXPECT_GT(max_abs_diff(a.values, b.values), 0.0f);
  ThoughtSequence other{{10, special::kEosThink}};
  EXPECT_GT(max_abs_diff(a.values, m.comp.compress(other).values), 0.0f);
  // Deterministic.
  EXPECT_EQ(m.comp.compress(shortz).values.values(), a.values.values());
}

TEST(Compress, LeftPaddingPutsTokensLast) {
  ThinkStateModel<double> m(tiny_config(), 11);
  ThoughtSequence z{{9, special::kEosThink}};
  Graph<double> g(false);
  auto emb = g.embedding(m.backbone.embed, z.ids);
  auto manual_in = g.concat_rows({m.comp.pad, m.comp.pad, emb});
  LayerCache<double> cache;
  RopeTable<double> rope(64, 8, 10000.0);
  auto y = layer_forward(g, m.comp.layer, manual_in, cache, m.config(), rope);
  auto s = m.comp.compress(z);
  for (std::size_t i = 0; i < s.values.numel(); ++i) EXPECT_NEAR(s.values[i], y[i], 1e-12);
}

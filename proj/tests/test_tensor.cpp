#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "thinkstate/gradcheck.hpp"
#include "thinkstate/graph.hpp"

using namespace thinkstate;

namespace {

template <typename T>
BasicTensor<T> rand_tensor(Shape s, std::mt19937_64& rng, bool grad = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  BasicTensor<T> t(std::move(s), grad);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

std::vector<float> naive_matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<float> c(m * n, 0.0f);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += double(a.at(i, p)) * double(b.at(p, j));
      c[i * n + j] = static_cast<float>(s);
    }
  return c;
}

}  // namespace

TEST(Matmul, IdentityAndDot) {
  Graph<float> g(false);
  Tensor eye({2, 2}, {1, 0, 0, 1}), b({2, 2}, {3, 4, 5, 6});
  auto c = g.matmul(eye, b);
  EXPECT_EQ(c.values(), (std::vector<float>{3, 4, 5, 6}));
  Tensor r({1, 2}, {1, 2}), col({2, 1}, {3, 4});
  EXPECT_FLOAT_EQ(g.matmul(r, col)[0], 11.0f);
}

TEST(Matmul, MatchesTripleLoopUpTo16) {
  std::mt19937_64 rng(1);
  Graph<float> g(false);
  for (std::size_t m = 1; m <= 16; m += 3)
    for (std::size_t k = 1; k <= 16; k += 5)
      for (std::size_t n = 1; n <= 16; n += 4) {
        auto a = rand_tensor<float>({m, k}, rng), b = rand_tensor<float>({k, n}, rng);
        auto c = g.matmul(a, b);
        EXPECT_LE(max_abs_diff<float>(c.data(), naive_matmul(a, b)), 1e-6f);
      }
  auto a = rand_tensor<float>({4, 5}, rng), b = rand_tensor<float>({5, 3}, rng);
  EXPECT_LE(max_abs_diff<float>(g.matmul(a, b).data(), naive_matmul(a, b)), 1e-6f);
}

TEST(Matmul, ShapeMismatchNamesShapes) {
  Graph<float> g(false);
  Tensor a({2, 3}), b({4, 5});
  try {
    g.matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos);
  }
}

TEST(Matmul, RowsAreIndependentBitwise) {
  std::mt19937_64 rng(2);
  Graph<float> g(false);
  auto a = rand_tensor<float>({11, 37}, rng), b = rand_tensor<float>({37, 29}, rng);
  auto full = g.matmul(a, b);
  for (std::size_t r = 0; r < 11; ++r) {
    auto one = g.matmul(g.slice_rows(a, r, r + 1), b);
    for (std::size_t j = 0; j < 29; ++j) EXPECT_EQ(one[j], full.at(r, j));
  }
}

TEST(RmsNorm, KnownValuesAndOracle) {
  Graph<float> g(false);
  Tensor gain({2}, {1, 1});
  auto z = g.rms_norm(Tensor({1, 2}), gain, 1e-6f);
  EXPECT_EQ(z.values(), (std::vector<float>{0, 0}));
  auto y = g.rms_norm(Tensor({1, 2}, {3, -3}), gain, 1e-12f);
  EXPECT_NEAR(y[0], 1.0f, 1e-6);
  EXPECT_NEAR(y[1], -1.0f, 1e-6);

  std::mt19937_64 rng(3);
  auto x = rand_tensor<float>({3, 17}, rng), gn = rand_tensor<float>({17}, rng);
  auto out = g.rms_norm(x, gn, 1e-6f);
  for (std::size_t r = 0; r < 3; ++r) {
    double ms = 0;
    for (std::size_t j = 0; j < 17; ++j) ms += double(x.at(r, j)) * x.at(r, j);
    const double inv = 1.0 / std::sqrt(ms / 17 + 1e-6);
    for (std::size_t j = 0; j < 17; ++j)
      EXPECT_NEAR(out.at(r, j), x.at(r, j) * inv * gn[j], 1e-6);
  }
}

TEST(Rotary, ZeroPositionIsIdentity) {
  std::mt19937_64 rng(4);
  auto x = rand_tensor<float>({2, 1, 8}, rng);
  std::vector<std::size_t> pos = {0};
  auto y = rotary_apply(x, pos, 10000.0);
  EXPECT_EQ(y.values(), x.values());
}

TEST(Rotary, UnitPairRotation) {
  // With d_head = 2 the single pair has frequency 1.
  for (std::size_t p : {1u, 2u, 5u, 17u}) {
    Tensor x({1, 1, 2}, {1, 0});
    std::vector<std::size_t> pos = {p};
    auto y = rotary_apply(x, pos, 10000.0);
    EXPECT_NEAR(y[0], std::cos(double(p)), 1e-6);
    EXPECT_NEAR(y[1], std::sin(double(p)), 1e-6);
  }
}

TEST(Rotary, DotDependsOnlyOnOffset) {
  std::mt19937_64 rng(5);
  auto a = rand_tensor<double>({1, 1, 16}, rng), b = rand_tensor<double>({1, 1, 16}, rng);
  auto dot_at = [&](std::size_t p, std::size_t q) {
    std::vector<std::size_t> pp = {p}, qq = {q};
    auto ra = rotary_apply(a, pp, 10000.0), rb = rotary_apply(b, qq, 10000.0);
    double s = 0;
    for (std::size_t i = 0; i < 16; ++i) s += ra[i] * rb[i];
    return s;
  };
  const double base = dot_at(7, 3);
  for (std::size_t s : {0u, 1u, 10u, 100u}) EXPECT_NEAR(dot_at(7 + s, 3 + s), base, 1e-5);
  Tensor odd({1, 1, 3});
  std::vector<std::size_t> pos = {0};
  EXPECT_THROW(rotary_apply(odd, pos, 10000.0), ConfigError);
}

TEST(CrossEntropy, KnownValues) {
  Graph<float> g(false);
  std::vector<int> t = {2};
  EXPECT_NEAR(g.cross_entropy(Tensor({1, 4}), t, {true}).item(), std::log(4.0), 1e-6);
  Tensor sat({1, 4}, {0, 0, 1e4f, 0});
  EXPECT_NEAR(g.cross_entropy(sat, t, {true}).item(), 0.0, 1e-6);
  EXPECT_THROW(g.cross_entropy(sat, t, {false}), ContractError);
}

TEST(CrossEntropy, MatchesDirectFormula) {
  std::mt19937_64 rng(6);
  auto logits = rand_tensor<double>({3, 5}, rng, true);
  std::vector<int> t = {4, 0, 2};
  std::vector<bool> mask = {true, false, true};
  Graph<double> g;
  auto loss = g.cross_entropy(logits, t, mask);
  double oracle = 0;
  for (std::size_t r : {0u, 2u}) {
    double z = 0;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(logits.at(r, j));
    oracle += -std::log(std::exp(logits.at(r, t[r])) / z);
  }
  EXPECT_NEAR(loss.item(), oracle / 2, 1e-5);
  g.backward(loss);
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(logits.at(r, j));
    for (std::size_t j = 0; j < 5; ++j) {
      const double expect =
          mask[r] ? (std::exp(logits.at(r, j)) / z - (int(j) == t[r] ? 1.0 : 0.0)) / 2 : 0.0;
      EXPECT_NEAR(logits.grad()[r * 5 + j], expect, 1e-9);
    }
  }
}

TEST(Backward, SumAndSquare) {
  Tensor x({3}, {1, -2, 0.5f}, true);
  Graph<float> g;
  g.backward(g.sum(x));
  for (float v : x.grad()) EXPECT_EQ(v, 1.0f);
  x.zero_grad();
  Graph<float> g2;
  g2.backward(g2.sum(g2.mul(x, x)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, NonScalarRejected) {
  Tensor x({3}, {1, 2, 3}, true);
  Graph<float> g;
  auto y = g.scale(x, 2.0f);
  EXPECT_THROW(g.backward(y), ContractError);
}

TEST(Backward, NodesAreTopologicallyOrdered) {
  std::mt19937_64 rng(7);
  auto a = rand_tensor<float>({2, 3}, rng, true), b = rand_tensor<float>({3, 2}, rng, true);
  Graph<float> g;
  auto y = g.sum(g.silu(g.matmul(a, b)));
  ASSERT_EQ(g.node_count(), 3u);
  EXPECT_STREQ(g.node_op(0), "matmul");
  EXPECT_STREQ(g.node_op(1), "silu");
  EXPECT_STREQ(g.node_op(2), "sum");
  g.backward(y);
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
}

TEST(Forward, DeterministicAndFinite) {
  std::mt19937_64 rng(8);
  auto q = rand_tensor<float>({5, 8}, rng), k = rand_tensor<float>({5, 8}, rng),
       v = rand_tensor<float>({5, 8}, rng);
  Graph<float> g(false);
  auto o1 = g.attention(q, k, v, 2, 0);
  auto o2 = g.attention(q, k, v, 2, 0);
  EXPECT_EQ(o1.values(), o2.values());
  for (float x : o1.data()) EXPECT_TRUE(std::isfinite(x));
}

TEST(GradCheck, LinearIsExact) {
  std::mt19937_64 rng(9);
  auto a = rand_tensor<double>({1, 6}, rng), x = rand_tensor<double>({6, 1}, rng);
  const double err = grad_check<double>([&](Graph<double>& g) { return g.sum(g.matmul(a, x)); },
                                        {x}, 1e-3);
  EXPECT_LT(err, 1e-5);
}

TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(10);
  using D = double;
  const D h = 1e-3;
  auto a = rand_tensor<D>({3, 4}, rng), b = rand_tensor<D>({4, 8}, rng), c = rand_tensor<D>({3, 8}, rng);
  auto w = rand_tensor<D>({3, 8}, rng);  // fixed projection so gradients are O(1)
  auto proj = [&](Graph<D>& g, const BasicTensor<D>& y) { return g.sum(g.mul(y, w)); };
  auto gain = rand_tensor<D>({8}, rng);
  RopeTable<D> table(16, 4, 10000.0);
  std::vector<std::size_t> pos = {3, 4, 9};
  std::vector<int> ids = {1, 0, 1};
  std::vector<int> tgt = {7, 0, 3};
  auto table_e = rand_tensor<D>({2, 8}, rng);

  struct Case {
    const char* name;
    std::function<BasicTensor<D>(Graph<D>&)> f;
    std::vector<BasicTensor<D>> inputs;
  };
  std::vector<Case> cases = {
      {"matmul", [&](Graph<D>& g) { return proj(g, g.matmul(a, b)); }, {a, b}},
      {"add", [&](Graph<D>& g) { return proj(g, g.add(c, w)); }, {c}},
      {"mul", [&](Graph<D>& g) { return proj(g, g.mul(c, c)); }, {c}},
      {"scale", [&](Graph<D>& g) { return proj(g, g.scale(c, 1.7)); }, {c}},
      {"silu", [&](Graph<D>& g) { return proj(g, g.silu(c)); }, {c}},
      {"rms_norm", [&](Graph<D>& g) { return proj(g, g.rms_norm(c, gain, 1e-6)); }, {c, gain}},
      {"rope", [&](Graph<D>& g) { return proj(g, g.rope(c, pos, 2, table)); }, {c}},
      {"attention", [&](Graph<D>& g) { return proj(g, g.attention(c, g.scale(c, 0.5), w, 2, 0)); }, {c}},
      {"softmax_rows", [&](Graph<D>& g) { return proj(g, g.softmax_rows(c)); }, {c}},
      {"embedding", [&](Graph<D>& g) { return proj(g, g.embedding(table_e, ids)); }, {table_e}},
      {"concat_slice", [&](Graph<D>& g) {
         auto cat = g.concat_rows({g.slice_rows(c, 1, 3), g.slice_rows(c, 0, 1)});
         return proj(g, cat);
       }, {c}},
      {"cross_entropy", [&](Graph<D>& g) {
         return g.cross_entropy(c, tgt, {true, false, true});
       }, {c}},
  };
  for (auto& cs : cases) {
    auto rep = grad_check_report<D>(cs.f, cs.inputs, h);
    EXPECT_LE(rep.max_rel_error, 1e-3) << cs.name;
  }
}

TEST(GradCheck, ComposedMatmulNormCrossEntropy) {
  std::mt19937_64 rng(11);
  auto x = rand_tensor<double>({4, 6}, rng), w = rand_tensor<double>({6, 5}, rng);
  auto gain = rand_tensor<double>({6}, rng);
  std::vector<int> t = {1, 4, 0, 2};
  auto f = [&](Graph<double>& g) {
    return g.cross_entropy(g.matmul(g.rms_norm(x, gain, 1e-6), w), t,
                           {true, true, true, true});
  };
  EXPECT_LE(grad_check<double>(f, {x, w, gain}, 1e-3), 1e-3);
}

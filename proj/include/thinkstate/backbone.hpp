#pragma once

// Decoder-only causal transformer with taps after a shallow and a deep block.
//
// Blocks are pre-norm: x += Attn(RMSNorm(x)); x += FFN(RMSNorm(x)) with rotary
// positions and a SiLU-gated feed-forward. Block indices are 1-based; "after
// block k" is the residual stream leaving block k.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "thinkstate/config.hpp"
#include "thinkstate/graph.hpp"

namespace thinkstate {

// Deterministic normal sampler (Box-Muller over mt19937_64) so initial
// weights do not depend on the standard library's distribution code.
class NormalRng {
 public:
  explicit NormalRng(std::uint64_t seed) : gen_(seed) {}
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0;
  bool has_spare_ = false;
};

template <typename T>
BasicTensor<T> random_normal(Shape shape, double stddev, NormalRng& rng) {
  BasicTensor<T> t(std::move(shape), true);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
BasicTensor<T> ones_param(std::size_t d) {
  return BasicTensor<T>({d}, std::vector<T>(d, T(1)), true);
}

template <typename T>
struct DecoderLayer {
  BasicTensor<T> attn_norm, wq, wk, wv, wo;
  BasicTensor<T> ffn_norm, w_gate, w_up, w_down;

  static DecoderLayer random(const ModelConfig& cfg, NormalRng& rng) {
    const std::size_t d = cfg.d_model, f = cfg.d_ff;
    const double s = 0.02, so = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    DecoderLayer l;
    l.attn_norm = ones_param<T>(d);
    l.wq = random_normal<T>({d, d}, s, rng);
    l.wk = random_normal<T>({d, d}, s, rng);
    l.wv = random_normal<T>({d, d}, s, rng);
    l.wo = random_normal<T>({d, d}, so, rng);
    l.ffn_norm = ones_param<T>(d);
    l.w_gate = random_normal<T>({d, f}, s, rng);
    l.w_up = random_normal<T>({d, f}, s, rng);
    l.w_down = random_normal<T>({f, d}, so, rng);
    return l;
  }

  DecoderLayer clone() const {
    DecoderLayer l;
    auto src = const_cast<DecoderLayer*>(this);
    std::vector<BasicTensor<T>*> dst_list;
    l.visit([&](const std::string&, BasicTensor<T>& t) { dst_list.push_back(&t); }, "");
    std::size_t i = 0;
    src->visit([&](const std::string&, BasicTensor<T>& t) { *dst_list[i++] = t.clone(); }, "");
    return l;
  }

  template <typename F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "attn_norm", attn_norm);
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "wo", wo);
    f(prefix + "ffn_norm", ffn_norm);
    f(prefix + "w_gate", w_gate);
    f(prefix + "w_up", w_up);
    f(prefix + "w_down", w_down);
  }
};

// Key/value history for one block; keys are stored after rotation.
template <typename T>
struct LayerCache {
  BasicTensor<T> k, v;

  std::size_t length() const { return k.defined() ? k.rows() : 0; }
};

namespace detail {

template <typename T>
void append_rows(Graph<T>& g, BasicTensor<T>& cache, const BasicTensor<T>& fresh) {
  if (!cache.defined() || cache.rows() == 0) {
    cache = fresh;
    return;
  }
  const bool grad_path = g.recording() && (cache.requires_grad() || fresh.requires_grad());
  if (grad_path) {
    cache = g.concat_rows({cache, fresh});
    return;
  }
  if (cache.use_count() > 1) cache = cache.clone();
  auto& st = cache.storage();
  st.value.insert(st.value.end(), fresh.data().begin(), fresh.data().end());
  st.shape[0] += fresh.rows();
}

template <typename T>
void truncate_rows(BasicTensor<T>& t, std::size_t keep) {
  if (!t.defined()) return;
  const std::size_t d = t.cols();
  if (t.use_count() > 1 || t.requires_grad()) {
    std::vector<T> vals(t.data().begin(), t.data().begin() + keep * d);
    t = BasicTensor<T>({keep, d}, std::move(vals));
    return;
  }
  auto& st = t.storage();
  st.value.resize(keep * d);
  st.shape[0] = keep;
}

}  // namespace detail

// Runs one decoder block over x (rows appended after the cached positions).
template <typename T>
BasicTensor<T> layer_forward(Graph<T>& g, const DecoderLayer<T>& L, const BasicTensor<T>& x,
                             LayerCache<T>& cache, const ModelConfig& cfg,
                             const RopeTable<T>& rope) {
  const std::size_t n = x.rows();
  const std::size_t offset = cache.length();
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = offset + i;
  const T eps = static_cast<T>(cfg.norm_eps);

  auto h = g.rms_norm(x, L.attn_norm, eps);
  auto q = g.rope(g.matmul(h, L.wq), pos, cfg.n_heads, rope);
  auto k = g.rope(g.matmul(h, L.wk), pos, cfg.n_heads, rope);
  auto v = g.matmul(h, L.wv);
  detail::append_rows(g, cache.k, k);
  detail::append_rows(g, cache.v, v);
  auto a = g.attention(q, cache.k, cache.v, cfg.n_heads, offset);
  auto x1 = g.add(x, g.matmul(a, L.wo));

  auto h2 = g.rms_norm(x1, L.ffn_norm, eps);
  auto gate = g.silu(g.matmul(h2, L.w_gate));
  auto up = g.matmul(h2, L.w_up);
  return g.add(x1, g.matmul(g.mul(gate, up), L.w_down));
}

// Per-block key/value history of the backbone.
template <typename T>
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(std::size_t n_layers) : layers_(n_layers) {}

  std::size_t n_layers() const { return layers_.size(); }
  LayerCache<T>& layer(std::size_t i) { return layers_[i]; }
  const LayerCache<T>& layer(std::size_t i) const { return layers_[i]; }

  // Length shared by all blocks; throws if blocks disagree.
  std::size_t length() const {
    const std::size_t n = layers_.empty() ? 0 : layers_.front().length();
    for (const auto& l : layers_)
      if (l.length() != n)
        throw CacheError("cache blocks hold different lengths (" + std::to_string(n) +
                         " vs " + std::to_string(l.length()) + ")");
    return n;
  }

  // Keeps exactly the first `keep` positions in every block.
  void truncate(std::size_t keep) {
    const std::size_t n = length();
    if (keep > n)
      throw RangeError("cache_truncate: keep " + std::to_string(keep) + " exceeds cached length " +
                       std::to_string(n));
    for (auto& l : layers_) {
      detail::truncate_rows(l.k, keep);
      detail::truncate_rows(l.v, keep);
    }
  }

  void clear() {
    for (auto& l : layers_) l = LayerCache<T>{};
  }

  // Independent copy; the original and the copy may be extended separately.
  KVCache deep_copy() const {
    KVCache c(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].k.defined()) c.layers_[i].k = layers_[i].k.clone();
      if (layers_[i].v.defined()) c.layers_[i].v = layers_[i].v.clone();
    }
    return c;
  }

 private:
  std::vector<LayerCache<T>> layers_;
};

template <typename T>
void cache_truncate(KVCache<T>& cache, std::size_t keep) {
  cache.truncate(keep);
}

template <typename T>
struct TapBundle {
  BasicTensor<T> x;       // injected hidden states entering block L_in + 1
  BasicTensor<T> h_out;   // residual stream after block L_out
  BasicTensor<T> logits;  // [len x V]
};

template <typename T = float>
class Backbone {
 public:
  using TensorT = BasicTensor<T>;

  Backbone() = default;

  Backbone(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    NormalRng rng(seed);
    embed = random_normal<T>({cfg.vocab_size, cfg.d_model}, 0.02, rng);
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
      layers.push_back(DecoderLayer<T>::random(cfg, rng));
    final_norm = ones_param<T>(cfg.d_model);
    unembed = random_normal<T>({cfg.d_model, cfg.vocab_size}, 0.02, rng);
    build_rope();
  }

  const ModelConfig& config() const { return cfg_; }
  const RopeTable<T>& rope() const { return rope_; }
  KVCache<T> new_cache() const { return KVCache<T>(cfg_.n_layers); }

  // Embeds tokens and runs blocks 1..L_in, extending those blocks' caches.
  TensorT forward_lower(Graph<T>& g, std::span<const int> ids, KVCache<T>& cache) const {
    if (ids.empty()) throw ContractError("forward_lower: empty token list");
    for (int id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
        throw VocabularyError("forward_lower: token id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(cfg_.vocab_size));
    const std::size_t start = cache.layer(0).length();
    for (std::size_t l = 0; l < cfg_.l_in; ++l)
      if (cache.layer(l).length() != start)
        throw CacheError("forward_lower: lower blocks hold different lengths");
    if (start + ids.size() > cfg_.max_positions)
      throw CapacityError("forward_lower: " + std::to_string(start + ids.size()) +
                          " positions exceed max_positions " +
                          std::to_string(cfg_.max_positions));
    auto x = g.embedding(embed, ids);
    for (std::size_t l = 0; l < cfg_.l_in; ++l)
      x = layer_forward(g, layers[l], x, cache.layer(l), cfg_, rope_);
    return x;
  }

  // Runs blocks L_in+1..n_layers on the injected states, tapping after L_out.
  TapBundle<T> forward_upper(Graph<T>& g, const TensorT& x_tilde, KVCache<T>& cache) const {
    const std::size_t n = x_tilde.rows();
    const std::size_t lower = cache.layer(cfg_.l_in - 1).length();
    const std::size_t upper = cache.layer(cfg_.l_in).length();
    if (upper + n != lower)
      throw CacheError("forward_upper: lower blocks hold " + std::to_string(lower) +
                       " positions but upper blocks hold " + std::to_string(upper) + " + " +
                       std::to_string(n) + " new rows");
    TapBundle<T> out;
    out.x = x_tilde;
    auto x = x_tilde;
    for (std::size_t l = cfg_.l_in; l < cfg_.n_layers; ++l) {
      x = layer_forward(g, layers[l], x, cache.layer(l), cfg_, rope_);
      if (l + 1 == cfg_.l_out) out.h_out = x;
    }
    out.logits = project_logits(g, x);
    return out;
  }

  // Plain forward with no state injection.
  TapBundle<T> forward(Graph<T>& g, std::span<const int> ids, KVCache<T>& cache) const {
    return forward_upper(g, forward_lower(g, ids, cache), cache);
  }

  TensorT project_logits(Graph<T>& g, const TensorT& h) const {
    return g.matmul(g.rms_norm(h, final_norm, static_cast<T>(cfg_.norm_eps)), unembed);
  }

  template <typename F>
  void visit_parameters(F&& f) {
    f("embed", embed);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(f, "layers." + std::to_string(i + 1) + ".");
    f("final_norm", final_norm);
    f("unembed", unembed);
  }

  void build_rope() {
    rope_ = RopeTable<T>(cfg_.max_positions + cfg_.chunk_size + cfg_.max_think_len + 1,
                         cfg_.d_head, cfg_.rope_theta);
  }

  TensorT embed;
  std::vector<DecoderLayer<T>> layers;
  TensorT final_norm;
  TensorT unembed;

 private:
  ModelConfig cfg_;
  RopeTable<T> rope_;
};

// Greedy choice over a logits row; ties go to the lowest token id.
template <typename T>
int decode_next(std::span<const T> logits) {
  if (logits.empty()) throw ContractError("decode_next: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

}  // namespace thinkstate

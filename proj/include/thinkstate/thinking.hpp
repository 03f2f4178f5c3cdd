#pragma once

// Thinking block T (one decoder layer that writes a thought from a chunk's
// deep representations) and compression block C (one causal layer that turns
// a thought into a c x d state).

#include <span>
#include <string>
#include <vector>

#include "thinkstate/backbone.hpp"
#include "thinkstate/vocab.hpp"

namespace thinkstate {

struct ThoughtSequence {
  std::vector<int> ids;  // always ends with <EOS_think> when terminal
  bool terminal = true;
  bool truncated = false;

  static ThoughtSequence empty() { return {{special::kEosThink}, true, false}; }
  bool trivial() const { return ids.size() == 1 && ids[0] == special::kEosThink; }
  std::size_t size() const { return ids.size(); }
  bool operator==(const ThoughtSequence& o) const { return ids == o.ids; }
};

template <typename T>
struct ThinkingState {
  BasicTensor<T> values;  // [c x d]
  bool trivial = true;

  static ThinkingState zero(std::size_t c, std::size_t d) {
    return {BasicTensor<T>({c, d}), true};
  }
};

template <typename T = float>
class ThinkingBlock {
 public:
  using TensorT = BasicTensor<T>;

  ThinkingBlock() = default;

  // Copy of the backbone's last block, final norm and unembedding; the token
  // embedding is the backbone's own tensor.
  static ThinkingBlock from_backbone(const Backbone<T>& bb) {
    ThinkingBlock t;
    t.cfg_ = bb.config();
    t.layer = bb.layers.back().clone();
    t.final_norm = bb.final_norm.clone();
    t.unembed = bb.unembed.clone();
    t.embed = bb.embed;
    t.build_rope();
    return t;
  }

  static ThinkingBlock random(const Backbone<T>& bb, std::uint64_t seed) {
    NormalRng rng(seed);
    ThinkingBlock t;
    t.cfg_ = bb.config();
    t.layer = DecoderLayer<T>::random(t.cfg_, rng);
    t.final_norm = ones_param<T>(t.cfg_.d_model);
    t.unembed = random_normal<T>({t.cfg_.d_model, t.cfg_.vocab_size}, 0.02, rng);
    t.embed = bb.embed;
    t.build_rope();
    return t;
  }

  const ModelConfig& config() const { return cfg_; }

  // Logits over the context [h_out ; embed(prefix)]; row r predicts the token
  // at context position r + 1.
  TensorT context_logits(Graph<T>& g, const TensorT& h_out, std::span<const int> prefix) const {
    LayerCache<T> cache;
    auto ctx = prefix.empty() ? h_out : g.concat_rows({h_out, g.embedding(embed, prefix)});
    auto y = layer_forward(g, layer, ctx, cache, cfg_, rope_);
    return g.matmul(g.rms_norm(y, final_norm, static_cast<T>(cfg_.norm_eps)), unembed);
  }

  // Teacher-forced logits for every gold token: [n x V], row k predicts gold[k].
  TensorT teacher_forced_logits(Graph<T>& g, const TensorT& h_out,
                                const ThoughtSequence& gold) const {
    check_gold(gold);
    const std::size_t c = h_out.rows(), n = gold.size();
    std::span<const int> prefix(gold.ids.data(), n - 1);
    auto logits = context_logits(g, h_out, prefix);
    return g.slice_rows(logits, c - 1, c - 1 + n);
  }

  // Mean next-token cross-entropy over the gold tokens, <EOS_think> included.
  TensorT thought_loss(Graph<T>& g, const TensorT& h_out, const ThoughtSequence& gold) const {
    auto logits = teacher_forced_logits(g, h_out, gold);
    return g.cross_entropy(logits, gold.ids, std::vector<bool>(gold.size(), true));
  }

  // Greedy generation; always returns a sequence ending in <EOS_think>.
  ThoughtSequence generate_thought(const TensorT& h_out) const {
    Graph<T> g(false);
    LayerCache<T> cache;
    ThoughtSequence z;
    auto y = layer_forward(g, layer, h_out, cache, cfg_, rope_);
    auto last = g.slice_rows(y, y.rows() - 1, y.rows());
    for (;;) {
      auto logits = g.matmul(g.rms_norm(last, final_norm, static_cast<T>(cfg_.norm_eps)), unembed);
      const int t = decode_next<T>(logits.data());
      if (t == special::kEosThink) {
        z.ids.push_back(t);
        break;
      }
      if (z.ids.size() + 1 == cfg_.max_think_len) {
        z.ids.push_back(special::kEosThink);
        z.truncated = true;
        break;
      }
      z.ids.push_back(t);
      const int one[1] = {t};
      last = layer_forward(g, layer, g.embedding(embed, one), cache, cfg_, rope_);
    }
    return z;
  }

  template <typename F>
  void visit_parameters(F&& f, const std::string& prefix) {
    layer.visit(f, prefix + "layer.");
    f(prefix + "final_norm", final_norm);
    f(prefix + "unembed", unembed);
  }

  void rebind(const Backbone<T>& bb) {
    cfg_ = bb.config();
    embed = bb.embed;
    build_rope();
  }

  DecoderLayer<T> layer;
  TensorT final_norm;
  TensorT unembed;
  TensorT embed;  // shared with the backbone

 private:
  void check_gold(const ThoughtSequence& gold) const {
    if (gold.ids.empty() || gold.ids.back() != special::kEosThink)
      throw SupervisionError("gold thought must end with <EOS_think>");
    if (gold.size() > cfg_.max_think_len)
      throw SupervisionError("gold thought of " + std::to_string(gold.size()) +
                             " tokens exceeds max_think_len " +
                             std::to_string(cfg_.max_think_len));
  }

  void build_rope() {
    rope_ = RopeTable<T>(cfg_.chunk_size + cfg_.max_think_len + 1, cfg_.d_head, cfg_.rope_theta);
  }

  ModelConfig cfg_;
  RopeTable<T> rope_;
};

template <typename T = float>
class CompressionBlock {
 public:
  using TensorT = BasicTensor<T>;

  CompressionBlock() = default;

  static CompressionBlock from_backbone(const Backbone<T>& bb) {
    CompressionBlock c;
    c.cfg_ = bb.config();
    c.layer = bb.layers.front().clone();
    const auto row = bb.embed.row(special::kPad);
    c.pad = TensorT({1, c.cfg_.d_model}, std::vector<T>(row.begin(), row.end()), true);
    c.embed = bb.embed;
    c.build_rope();
    return c;
  }

  const ModelConfig& config() const { return cfg_; }

  // Causal pass over thought embeddings [n x d]; left-pads to at least c rows
  // and returns the last c output rows.
  TensorT compress_embeddings(Graph<T>& g, const TensorT& emb) const {
    const std::size_t c = cfg_.chunk_size, n = emb.rows();
    auto x = emb;
    if (n < c) {
      std::vector<TensorT> parts(c - n, pad);
      parts.push_back(emb);
      x = g.concat_rows(parts);
    }
    LayerCache<T> cache;
    auto y = layer_forward(g, layer, x, cache, cfg_, rope_);
    return g.slice_rows(y, y.rows() - c, y.rows());
  }

  // Graph-mode state for a thought; the <EOS_think>-only thought maps to an
  // exact zero state that carries no gradient.
  TensorT compress_ids(Graph<T>& g, const ThoughtSequence& z) const {
    if (z.trivial()) return TensorT({cfg_.chunk_size, cfg_.d_model});
    return compress_embeddings(g, g.embedding(embed, z.ids));
  }

  ThinkingState<T> compress(const ThoughtSequence& z) const {
    if (z.trivial()) return ThinkingState<T>::zero(cfg_.chunk_size, cfg_.d_model);
    Graph<T> g(false);
    return {compress_ids(g, z), false};
  }

  template <typename F>
  void visit_parameters(F&& f, const std::string& prefix) {
    layer.visit(f, prefix + "layer.");
    f(prefix + "pad", pad);
  }

  void rebind(const Backbone<T>& bb) {
    cfg_ = bb.config();
    embed = bb.embed;
    build_rope();
  }

  DecoderLayer<T> layer;
  TensorT pad;    // [1 x d] padding embedding
  TensorT embed;  // shared with the backbone

 private:
  void build_rope() {
    rope_ = RopeTable<T>(std::max(cfg_.chunk_size, cfg_.max_think_len) + 1, cfg_.d_head,
                         cfg_.rope_theta);
  }

  ModelConfig cfg_;
  RopeTable<T> rope_;
};

template <typename T>
std::pair<ThinkingBlock<T>, CompressionBlock<T>> init_from_backbone(const Backbone<T>& bb) {
  return {ThinkingBlock<T>::from_backbone(bb), CompressionBlock<T>::from_backbone(bb)};
}

}  // namespace thinkstate

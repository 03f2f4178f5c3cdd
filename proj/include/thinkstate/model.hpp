#pragma once

// Chunk-recurrent composition of backbone, thinking block and compression
// block: sequential prefill, the teacher-forced parallel pass used for
// training, the joint loss and answer decoding.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "thinkstate/thinking.hpp"

namespace thinkstate {

struct ChunkPlan {
  std::size_t n_tokens = 0;
  std::size_t chunk_size = 1;
  std::size_t n_full = 0;  // K
  std::size_t tail = 0;    // tokens in the open tail

  std::size_t begin(std::size_t i) const { return i * chunk_size; }
  std::size_t end(std::size_t i) const { return std::min(n_tokens, (i + 1) * chunk_size); }
  std::size_t n_chunks() const { return n_full + (tail > 0 ? 1 : 0); }
};

inline ChunkPlan chunk_partition(std::size_t n_tokens, std::size_t c) {
  if (c < 1) throw ContractError("chunk_partition: chunk size must be >= 1");
  return {n_tokens, c, n_tokens / c, n_tokens % c};
}

// Entry i holds the thought written from chunk i and its compressed state;
// that state is injected into chunk i + 1. Chunk 0 always receives zero.
template <typename T>
struct RecurrentTrace {
  std::vector<ThoughtSequence> thoughts;
  std::vector<ThinkingState<T>> states;

  std::size_t size() const { return thoughts.size(); }
  std::size_t nontrivial_count() const {
    std::size_t n = 0;
    for (const auto& s : states) n += s.trivial ? 0 : 1;
    return n;
  }
};

template <typename T>
std::string format_trace(const RecurrentTrace<T>& trace, const Vocabulary& vocab) {
  std::ostringstream os;
  for (std::size_t i = 0; i < trace.size(); ++i)
    os << i << '\t' << vocab.render_thought(trace.thoughts[i].ids) << '\t'
       << (trace.states[i].trivial ? 1 : 0) << '\n';
  return os.str();
}

template <typename T = float>
struct ThinkStateModel {
  using TensorT = BasicTensor<T>;

  ThinkStateModel() = default;

  explicit ThinkStateModel(const ModelConfig& cfg, std::uint64_t seed, bool with_thinking = true)
      : backbone(cfg, seed), has_thinking(with_thinking) {
    if (has_thinking) std::tie(think, comp) = init_from_backbone(backbone);
  }

  const ModelConfig& config() const { return backbone.config(); }

  ThinkingState<T> zero_state() const {
    return ThinkingState<T>::zero(config().chunk_size, config().d_model);
  }

  // Named parameters: backbone first, then T and C (the shared embedding is
  // listed once).
  template <typename F>
  void visit_parameters(F&& f) {
    backbone.visit_parameters(f);
    if (has_thinking) {
      think.visit_parameters(f, "think.");
      comp.visit_parameters(f, "comp.");
    }
  }

  std::vector<TensorT*> parameters() {
    std::vector<TensorT*> out;
    visit_parameters([&](const std::string&, TensorT& t) { out.push_back(&t); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->numel();
    return n;
  }

  ThinkStateModel deep_copy() const {
    ThinkStateModel m = *this;
    for (auto* p : m.parameters()) *p = p->clone();
    m.think.rebind(m.backbone);
    m.comp.rebind(m.backbone);
    return m;
  }

  Backbone<T> backbone;
  ThinkingBlock<T> think;
  CompressionBlock<T> comp;
  bool has_thinking = true;
};

namespace detail {

// X + S restricted to the first rows of the state (a partial chunk uses the
// leading rows). Trivial states are skipped, which is exact.
template <typename T>
BasicTensor<T> inject(Graph<T>& g, const BasicTensor<T>& x, const ThinkingState<T>& s,
                      std::size_t row_offset = 0) {
  if (s.trivial) return x;
  const auto rows = g.slice_rows(s.values, row_offset, row_offset + x.rows());
  return g.add(x, rows);
}

template <typename T>
void append_rows_to(std::vector<T>& dst, const BasicTensor<T>& src) {
  dst.insert(dst.end(), src.data().begin(), src.data().end());
}

}  // namespace detail

template <typename T>
struct PrefillResult {
  KVCache<T> cache;
  ChunkPlan plan;
  RecurrentTrace<T> trace;
  ThinkingState<T> state;       // injected into the open chunk
  std::vector<T> tail_h_out;    // deep rows of the open tail so far
  BasicTensor<T> logits;        // [n_tokens x V]
  std::size_t thought_calls = 0;
  std::size_t truncations = 0;
};

struct PrefillOptions {
  // When set, thoughts are taken from here (one per full chunk) instead of
  // being generated.
  const std::vector<ThoughtSequence>* forced = nullptr;
};

template <typename T>
PrefillResult<T> recurrent_prefill(const ThinkStateModel<T>& m, std::span<const int> ids,
                                   const PrefillOptions& opt = {}) {
  if (ids.empty()) throw ContractError("recurrent_prefill: empty query");
  const auto& cfg = m.config();
  PrefillResult<T> r;
  r.cache = m.backbone.new_cache();
  r.plan = chunk_partition(ids.size(), cfg.chunk_size);
  r.state = m.zero_state();
  if (opt.forced && opt.forced->size() != r.plan.n_full)
    throw SupervisionError("forced thoughts: " + std::to_string(opt.forced->size()) +
                           " sequences for " + std::to_string(r.plan.n_full) + " chunks");
  Graph<T> g(false);
  if (!m.has_thinking && !opt.forced) {
    // Every state is zero, so one pass over the whole query is the same thing.
    auto out = m.backbone.forward(g, ids, r.cache);
    r.logits = out.logits;
    r.trace.thoughts.assign(r.plan.n_full, ThoughtSequence::empty());
    r.trace.states.assign(r.plan.n_full, r.state);
    if (r.plan.tail > 0)
      r.tail_h_out.assign(out.h_out.data().end() - r.plan.tail * cfg.d_model,
                          out.h_out.data().end());
    return r;
  }
  std::vector<T> logits;
  logits.reserve(ids.size() * cfg.vocab_size);
  for (std::size_t i = 0; i < r.plan.n_chunks(); ++i) {
    const auto b = r.plan.begin(i), e = r.plan.end(i);
    auto x = m.backbone.forward_lower(g, ids.subspan(b, e - b), r.cache);
    auto out = m.backbone.forward_upper(g, detail::inject(g, x, r.state), r.cache);
    detail::append_rows_to(logits, out.logits);
    if (i >= r.plan.n_full) {
      detail::append_rows_to(r.tail_h_out, out.h_out);
      break;
    }
    ThoughtSequence z = ThoughtSequence::empty();
    if (opt.forced) {
      z = (*opt.forced)[i];
    } else if (m.has_thinking) {
      z = m.think.generate_thought(out.h_out);
      ++r.thought_calls;
      r.truncations += z.truncated ? 1 : 0;
    }
    r.state = m.has_thinking ? m.comp.compress(z) : m.zero_state();
    r.trace.thoughts.push_back(std::move(z));
    r.trace.states.push_back(r.state);
  }
  r.logits = BasicTensor<T>({ids.size(), cfg.vocab_size}, std::move(logits));
  return r;
}

template <typename T>
struct TeacherForcedOutput {
  BasicTensor<T> logits;  // [n x V]
  BasicTensor<T> h_out;   // [n x d]
  std::vector<BasicTensor<T>> thought_losses;  // one per full chunk
};

// One parallel pass with every state computed from gold thoughts.
template <typename T>
TeacherForcedOutput<T> teacher_forced_forward(Graph<T>& g, const ThinkStateModel<T>& m,
                                              std::span<const int> ids,
                                              const std::vector<ThoughtSequence>& gold) {
  const auto& cfg = m.config();
  const auto plan = chunk_partition(ids.size(), cfg.chunk_size);
  if (gold.size() != plan.n_full)
    throw SupervisionError("teacher forcing: " + std::to_string(gold.size()) +
                           " gold thoughts for " + std::to_string(plan.n_full) + " chunks");
  auto cache = m.backbone.new_cache();
  auto x = m.backbone.forward_lower(g, ids, cache);
  bool any = false;
  std::vector<BasicTensor<T>> rows;
  rows.reserve(plan.n_chunks());
  for (std::size_t i = 0; i < plan.n_chunks(); ++i) {
    const std::size_t len = plan.end(i) - plan.begin(i);
    const bool trivial = i == 0 || gold[i - 1].trivial();
    if (trivial) {
      rows.push_back(BasicTensor<T>({len, cfg.d_model}));
      continue;
    }
    any = true;
    auto s = m.comp.compress_ids(g, gold[i - 1]);
    rows.push_back(len == cfg.chunk_size ? s : g.slice_rows(s, 0, len));
  }
  auto x_tilde = any ? g.add(x, g.concat_rows(rows)) : x;
  auto up = m.backbone.forward_upper(g, x_tilde, cache);
  TeacherForcedOutput<T> out{up.logits, up.h_out, {}};
  for (std::size_t i = 0; i < plan.n_full; ++i) {
    auto h = g.slice_rows(up.h_out, plan.begin(i), plan.end(i));
    out.thought_losses.push_back(m.think.thought_loss(g, h, gold[i]));
  }
  return out;
}

template <typename T>
struct JointLoss {
  BasicTensor<T> total;
  BasicTensor<T> lm;
  T thought = 0;  // value of the summed thought losses
};

// L = CE over the masked (answer) positions + sum of per-chunk thought losses.
template <typename T>
JointLoss<T> joint_loss(Graph<T>& g, const BasicTensor<T>& logits, std::span<const int> targets,
                        const std::vector<bool>& mask,
                        const std::vector<BasicTensor<T>>& thought_losses) {
  bool any = false;
  for (bool b : mask) any = any || b;
  if (!any) throw ContractError("joint_loss: answer span is empty");
  JointLoss<T> out;
  out.lm = g.cross_entropy(logits, targets, mask);
  out.total = out.lm;
  for (const auto& t : thought_losses) {
    out.total = g.add(out.total, t);
    out.thought += t.item();
  }
  return out;
}

struct DecodeOptions {
  std::size_t max_new = 64;
  bool freeze_state = false;
  int stop_token = special::kEos;
};

struct DecodeResult {
  std::vector<int> tokens;  // includes the stop token when reached
  std::size_t thought_calls = 0;
  bool stopped = false;
};

// Greedy decoding that keeps chunking: generated tokens fill the open chunk,
// and every completed chunk writes a new thought and state.
template <typename T>
DecodeResult generate_answer(const ThinkStateModel<T>& m, PrefillResult<T>& pre,
                             const DecodeOptions& opt = {}) {
  const auto& cfg = m.config();
  const std::size_t c = cfg.chunk_size, d = cfg.d_model;
  DecodeResult res;
  Graph<T> g(false);
  std::span<const T> last = pre.logits.row(pre.logits.rows() - 1);
  BasicTensor<T> last_logits;
  std::size_t tail = pre.tail_h_out.size() / d;
  while (res.tokens.size() < opt.max_new) {
    const int t = decode_next<T>(last);
    res.tokens.push_back(t);
    if (t == opt.stop_token) {
      res.stopped = true;
      break;
    }
    if (res.tokens.size() == opt.max_new) break;
    const int one[1] = {t};
    auto x = m.backbone.forward_lower(g, one, pre.cache);
    auto out = m.backbone.forward_upper(g, detail::inject(g, x, pre.state, tail), pre.cache);
    last_logits = out.logits;
    last = last_logits.row(0);
    detail::append_rows_to(pre.tail_h_out, out.h_out);
    if (++tail == c) {
      if (m.has_thinking && !opt.freeze_state) {
        BasicTensor<T> h({c, d}, std::move(pre.tail_h_out));
        auto z = m.think.generate_thought(h);
        ++res.thought_calls;
        pre.state = m.comp.compress(z);
        pre.trace.thoughts.push_back(std::move(z));
        pre.trace.states.push_back(pre.state);
      }
      pre.tail_h_out.clear();
      tail = 0;
    }
  }
  return res;
}

}  // namespace thinkstate

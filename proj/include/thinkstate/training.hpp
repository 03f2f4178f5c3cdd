#pragma once

// Adam, per-mode training steps (teacher-forced, BPTT, CoT / No-CoT) and the
// training loop with JSON-lines logging.

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "thinkstate/eval.hpp"

namespace thinkstate {

struct TrainConfig {
  std::string mode = "thinkstate";  // thinkstate | bptt | cot | nocot
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double clip = 1.0;
  std::size_t warmup = 0;  // linear warmup steps
  std::size_t batch_size = 8;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  bool full_span_loss = false;
  bool align = true;
  std::size_t log_every = 10;
  std::size_t eval_every = 0;  // 0 disables the early-stopping check
  std::size_t eval_samples = 200;
  double target_accuracy = 0.995;

  bool thinking() const { return mode == "thinkstate" || mode == "bptt"; }
  bool cot() const { return mode == "cot"; }

  void validate() const {
    if (mode != "thinkstate" && mode != "bptt" && mode != "cot" && mode != "nocot")
      throw ConfigError("train.mode must be thinkstate, bptt, cot or nocot (got '" + mode + "')");
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ConfigError("train betas must lie in [0, 1)");
  }

  void bind(KeyBinder& b, const std::string& p) {
    b.bind(p + "mode", mode)
        .bind(p + "lr", lr)
        .bind(p + "beta1", beta1)
        .bind(p + "beta2", beta2)
        .bind(p + "eps", eps)
        .bind(p + "clip", clip)
        .bind(p + "warmup", warmup)
        .bind(p + "batch_size", batch_size)
        .bind(p + "steps", steps)
        .bind(p + "seed", seed)
        .bind(p + "full_span_loss", full_span_loss)
        .bind(p + "align", align)
        .bind(p + "log_every", log_every)
        .bind(p + "eval_every", eval_every)
        .bind(p + "eval_samples", eval_samples)
        .bind(p + "target_accuracy", target_accuracy);
  }
};

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m, v;
  std::size_t step = 0;
};

// Adam with bias correction after global-norm clipping. Returns the
// pre-clipping gradient norm.
template <typename T>
double adam_update(const std::vector<BasicTensor<T>*>& params, OptimizerState<T>& st,
                   const TrainConfig& cfg, double lr_scale = 1.0) {
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), {});
    st.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i]->numel(), T(0));
      st.v[i].assign(params[i]->numel(), T(0));
    }
  }
  double sq = 0;
  for (auto* p : params)
    if (p->has_grad())
      for (T g : p->grad()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  const double scale = cfg.clip > 0 && norm > cfg.clip ? cfg.clip / norm : 1.0;
  ++st.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, double(st.step));
  const double c2 = 1.0 - std::pow(b2, double(st.step));
  const double lr = cfg.lr * lr_scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (!p->has_grad()) continue;
    auto w = p->data();
    auto g = p->grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = double(g[j]) * scale;
      m[j] = static_cast<T>(b1 * m[j] + (1 - b1) * gj);
      v[j] = static_cast<T>(b2 * v[j] + (1 - b2) * gj * gj);
      const double mh = m[j] / c1, vh = v[j] / c2;
      w[j] = static_cast<T>(w[j] - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
  return norm;
}

struct StepResult {
  double loss = 0;
  double lm_loss = 0;
  double thought_loss = 0;
  double wall_ms = 0;  // forward + backward only
  double grad_norm = 0;
};

namespace detail {

inline std::string describe(const Vocabulary* vocab, const EncodedExample& e) {
  std::string s = "sample with n_ops=" + std::to_string(e.n_ops) + ", " +
                  std::to_string(e.tokens.size()) + " tokens";
  if (vocab) return s + ": " + vocab->detokenize(e.tokens);
  s += ": ids";
  for (int t : e.tokens) s += " " + std::to_string(t);
  return s;
}

template <typename T>
void check_finite(T v, const Vocabulary* vocab, const EncodedExample& e) {
  if (!std::isfinite(static_cast<double>(v)))
    throw NumericError("non-finite loss on " + describe(vocab, e));
}

}  // namespace detail

// Teacher-forced joint loss for one sample (graph mode).
template <typename T>
JointLoss<T> thinkstate_loss(Graph<T>& g, const ThinkStateModel<T>& m, const EncodedExample& e) {
  auto tf = teacher_forced_forward(g, m, e.tokens, e.gold);
  return joint_loss(g, tf.logits, e.targets, e.mask, tf.thought_losses);
}

struct BpttOptions {
  bool stop_state_gradients = false;  // cut the graph at every state boundary
  bool gold_embeddings = false;       // feed C gold embeddings instead of T's soft outputs
};

// Same objective with the chunk recurrence unrolled inside the graph: the
// state for chunk i+1 is compressed from T's teacher-forced output
// distribution over chunk i, so gradients cross every chunk boundary.
template <typename T>
JointLoss<T> bptt_loss(Graph<T>& g, const ThinkStateModel<T>& m, const EncodedExample& e,
                       const BpttOptions& opt = {}) {
  const auto& cfg = m.config();
  const auto plan = chunk_partition(e.tokens.size(), cfg.chunk_size);
  if (e.gold.size() != plan.n_full)
    throw SupervisionError("bptt: gold/chunk count mismatch");
  auto cache = m.backbone.new_cache();
  std::span<const int> ids(e.tokens);
  std::vector<BasicTensor<T>> logits, thought_losses;
  std::optional<BasicTensor<T>> state;
  for (std::size_t i = 0; i < plan.n_chunks(); ++i) {
    const auto b = plan.begin(i), n = plan.end(i) - b;
    auto x = m.backbone.forward_lower(g, ids.subspan(b, n), cache);
    if (state) x = g.add(x, n == cfg.chunk_size ? *state : g.slice_rows(*state, 0, n));
    auto out = m.backbone.forward_upper(g, x, cache);
    logits.push_back(out.logits);
    if (i >= plan.n_full) break;
    const auto& gold = e.gold[i];
    auto tfl = m.think.teacher_forced_logits(g, out.h_out, gold);
    thought_losses.push_back(g.cross_entropy(tfl, gold.ids, std::vector<bool>(gold.size(), true)));
    if (gold.trivial()) {
      state.reset();
      continue;
    }
    auto emb = opt.gold_embeddings ? g.embedding(m.backbone.embed, gold.ids)
                                   : g.matmul(g.softmax_rows(tfl), m.backbone.embed);
    auto s = m.comp.compress_embeddings(g, emb);
    state = opt.stop_state_gradients ? g.stop_gradient(s) : s;
  }
  return joint_loss(g, g.concat_rows(logits), e.targets, e.mask, thought_losses);
}

template <typename T>
JointLoss<T> plain_loss(Graph<T>& g, const ThinkStateModel<T>& m, const EncodedExample& e) {
  auto cache = m.backbone.new_cache();
  auto out = m.backbone.forward(g, e.tokens, cache);
  return joint_loss(g, out.logits, e.targets, e.mask, {});
}

template <typename T>
using LossFn = std::function<JointLoss<T>(Graph<T>&, const ThinkStateModel<T>&,
                                          const EncodedExample&)>;

// Gradient accumulation over the batch (each sample is its own graph, so no
// padding is needed), then one Adam update.
template <typename T>
StepResult train_step(ThinkStateModel<T>& m, OptimizerState<T>& opt, const TrainConfig& cfg,
                      const std::vector<const EncodedExample*>& batch, const LossFn<T>& loss_fn,
                      const Vocabulary* vocab = nullptr, double lr_scale = 1.0) {
  using clock = std::chrono::steady_clock;
  auto params = m.parameters();
  for (auto* p : params) p->clear_grad();
  StepResult r;
  const T inv = T(1) / static_cast<T>(batch.size());
  for (const auto* e : batch) {
    const auto t0 = clock::now();
    Graph<T> g;
    auto jl = loss_fn(g, m, *e);
    detail::check_finite(jl.total.item(), vocab, *e);
    g.backward(g.scale(jl.total, inv));
    r.wall_ms += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    r.loss += jl.total.item() / batch.size();
    r.lm_loss += jl.lm.item() / batch.size();
    r.thought_loss += static_cast<double>(jl.thought) / batch.size();
  }
  r.grad_norm = adam_update(params, opt, cfg, lr_scale);
  if (!std::isfinite(r.grad_norm))
    throw NumericError("non-finite gradient norm at optimizer step " + std::to_string(opt.step));
  return r;
}

template <typename T>
StepResult train_step_teacher_forced(ThinkStateModel<T>& m, OptimizerState<T>& opt,
                                     const TrainConfig& cfg,
                                     const std::vector<const EncodedExample*>& batch,
                                     const Vocabulary* vocab = nullptr) {
  return train_step<T>(m, opt, cfg, batch, thinkstate_loss<T>, vocab);
}

template <typename T>
StepResult train_step_bptt(ThinkStateModel<T>& m, OptimizerState<T>& opt, const TrainConfig& cfg,
                           const std::vector<const EncodedExample*>& batch,
                           const Vocabulary* vocab = nullptr) {
  return train_step<T>(
      m, opt, cfg, batch,
      [](Graph<T>& g, const ThinkStateModel<T>& mm, const EncodedExample& e) {
        return bptt_loss(g, mm, e);
      },
      vocab);
}

template <typename T>
StepResult train_baseline(ThinkStateModel<T>& m, OptimizerState<T>& opt, const TrainConfig& cfg,
                          const std::vector<const EncodedExample*>& batch,
                          const Vocabulary* vocab = nullptr) {
  if (m.has_thinking) throw ContractError("baseline training expects a model without T/C");
  return train_step<T>(m, opt, cfg, batch, plain_loss<T>, vocab);
}

inline EncodedExample encode_for_mode(const Vocabulary& vocab, const Record& r,
                                      const ModelConfig& mc, const TrainConfig& tc) {
  if (tc.thinking()) return encode_thinkstate(vocab, r, mc, tc.align, tc.full_span_loss);
  return encode_plain(vocab, r, tc.cot());
}

struct TrainOutcome {
  std::size_t steps = 0;
  double last_loss = 0;
  double eval_accuracy = -1;
  bool reached_target = false;
  std::vector<double> losses;
};

// Runs the configured number of steps, sampling batches with a seeded
// generator. Logs one JSON object per `log_every` steps; with eval_every set,
// stops once held-out accuracy reaches the target.
template <typename T>
TrainOutcome train(ThinkStateModel<T>& m, const Vocabulary& vocab, const std::vector<Record>& data,
                   const TrainConfig& cfg, std::ostream* log = nullptr,
                   const std::vector<Record>* heldout = nullptr) {
  cfg.validate();
  if (data.empty()) throw ContractError("train: empty training set");
  if (m.has_thinking != cfg.thinking())
    throw ContractError("train: mode " + cfg.mode + " does not match the model's T/C setup");
  std::vector<EncodedExample> enc;
  enc.reserve(data.size());
  for (const auto& r : data) enc.push_back(encode_for_mode(vocab, r, m.config(), cfg));

  LossFn<T> fn;
  if (cfg.mode == "thinkstate") fn = thinkstate_loss<T>;
  else if (cfg.mode == "bptt")
    fn = [](Graph<T>& g, const ThinkStateModel<T>& mm, const EncodedExample& e) {
      return bptt_loss(g, mm, e);
    };
  else fn = plain_loss<T>;

  EvalOptions eo;
  eo.cot = cfg.cot();
  eo.align = cfg.align;
  std::mt19937_64 rng(cfg.seed);
  OptimizerState<T> opt;
  TrainOutcome out;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<const EncodedExample*> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) batch.push_back(&enc[rng() % enc.size()]);
    const double warm = cfg.warmup ? std::min(1.0, double(step) / double(cfg.warmup)) : 1.0;
    auto r = train_step<T>(m, opt, cfg, batch, fn, &vocab, warm);
    out.steps = step;
    out.last_loss = r.loss;
    out.losses.push_back(r.loss);
    if (log && (step % cfg.log_every == 0 || step == 1)) {
      nlohmann::ordered_json j;
      j["step"] = step;
      j["loss"] = r.loss;
      j["lm_loss"] = r.lm_loss;
      j["thought_loss"] = r.thought_loss;
      j["wall_ms"] = r.wall_ms;
      j["mode"] = cfg.mode;
      *log << j.dump() << '\n';
      log->flush();
    }
    if (heldout && cfg.eval_every && step % cfg.eval_every == 0) {
      std::vector<Record> sub(heldout->begin(),
                              heldout->begin() + std::min(heldout->size(), cfg.eval_samples));
      const double acc = evaluate(m, vocab, sub, eo).all.accuracy();
      out.eval_accuracy = acc;
      if (log) {
        nlohmann::ordered_json j;
        j["step"] = step;
        j["eval_accuracy"] = acc;
        j["mode"] = cfg.mode;
        *log << j.dump() << '\n';
        log->flush();
      }
      if (acc >= cfg.target_accuracy) {
        out.reached_target = true;
        break;
      }
    }
  }
  return out;
}

}  // namespace thinkstate

namespace thinkstate {

// Synthetic sample with `tokens` positions split into k chunks, every chunk
// carrying a gold thought of `thought_len` words, answer loss on the last
// chunk. Used to time training steps at a fixed token count.
inline EncodedExample synthetic_example(std::size_t tokens, std::size_t k,
                                        std::size_t vocab_size, std::size_t thought_len,
                                        std::uint64_t seed) {
  if (k == 0 || tokens % k != 0)
    throw ContractError("synthetic_example: token count must be a multiple of the chunk count");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(special::kCount, static_cast<int>(vocab_size) - 1);
  EncodedExample e;
  e.tokens.resize(tokens);
  for (auto& t : e.tokens) t = word(rng);
  e.query_len = tokens - tokens / k;
  detail::finish_targets(e, e.query_len);
  for (std::size_t i = 0; i < k; ++i) {
    ThoughtSequence z;
    for (std::size_t j = 0; j < thought_len; ++j) z.ids.push_back(word(rng));
    z.ids.push_back(special::kEosThink);
    e.gold.push_back(std::move(z));
  }
  return e;
}

// Median forward+backward wall time (ms) of one training sample for `mode`
// (thinkstate or bptt) with the chunk size set to tokens / k.
template <typename T = float>
double median_step_ms(ModelConfig cfg, const std::string& mode, std::size_t tokens,
                      std::size_t k, std::size_t reps, std::uint64_t seed,
                      std::size_t thought_len = 2) {
  cfg.chunk_size = tokens / k;
  cfg.max_think_len = std::max(cfg.max_think_len, thought_len + 1);
  cfg.max_positions = std::max(cfg.max_positions, tokens + 1);
  cfg.validate();
  ThinkStateModel<T> m(cfg, seed);
  const auto e = synthetic_example(tokens, k, cfg.vocab_size, thought_len, seed);
  TrainConfig tc;
  tc.mode = mode;
  tc.validate();
  LossFn<T> fn;
  if (mode == "thinkstate") fn = thinkstate_loss<T>;
  else if (mode == "bptt")
    fn = [](Graph<T>& g, const ThinkStateModel<T>& mm, const EncodedExample& ex) {
      return bptt_loss(g, mm, ex);
    };
  else throw ContractError("median_step_ms: mode must be thinkstate or bptt");
  OptimizerState<T> opt;
  std::vector<double> ms;
  train_step<T>(m, opt, tc, {&e}, fn);  // warmup
  for (std::size_t r = 0; r < reps; ++r) ms.push_back(train_step<T>(m, opt, tc, {&e}, fn).wall_ms);
  return median(ms);
}

}  // namespace thinkstate

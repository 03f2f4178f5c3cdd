#pragma once

// Speculative prefill: assume every not-yet-verified state is zero, run all
// remaining chunks in one pass, write thoughts, and roll back to the first
// chunk whose thought is non-trivial. Exact; finishes in |R| + 1 rounds.

#include <chrono>
#include <vector>

#include "thinkstate/model.hpp"

namespace thinkstate {

struct PrefillStats {
  std::size_t rounds = 0;
  std::size_t nontrivial = 0;            // |R|
  std::vector<std::size_t> corrected;    // first non-trivial chunk per round
  std::vector<double> round_ms;
  std::size_t chunk_forwards = 0;
  std::size_t thought_calls = 0;
  double wall_ms = 0;
};

struct SpeculativeOptions {
  bool lazy = false;  // stop writing thoughts at the first non-trivial one
};

template <typename T>
struct SpeculativeResult {
  PrefillResult<T> prefill;
  PrefillStats stats;
};

template <typename T>
SpeculativeResult<T> speculative_prefill(const ThinkStateModel<T>& m, std::span<const int> ids,
                                         const SpeculativeOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  if (ids.empty()) throw ContractError("speculative_prefill: empty query");
  const auto& cfg = m.config();
  const std::size_t c = cfg.chunk_size, d = cfg.d_model, V = cfg.vocab_size;
  SpeculativeResult<T> out;
  auto& r = out.prefill;
  auto& st = out.stats;
  r.cache = m.backbone.new_cache();
  r.plan = chunk_partition(ids.size(), c);
  r.state = m.zero_state();
  const std::size_t K = r.plan.n_full;
  std::vector<T> logits;
  logits.reserve(ids.size() * V);
  std::size_t committed = 0;  // chunks whose cache, thought and state are final
  Graph<T> g(false);
  for (;;) {
    const auto t_round = clock::now();
    ++st.rounds;
    const std::size_t begin = committed * c;
    if (begin == ids.size()) {
      // Last chunk was non-trivial and there is no tail: nothing left to verify.
      st.round_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t_round).count());
      break;
    }
    // The pending state belongs to the first uncommitted chunk only; every
    // later chunk is speculated trivial.
    auto x = m.backbone.forward_lower(g, ids.subspan(begin), r.cache);
    auto x_tilde = x;
    if (!r.state.trivial) {
      const std::size_t rows = std::min(c, ids.size() - begin);
      std::vector<T> s(x.numel(), T(0));
      std::copy(r.state.values.data().begin(), r.state.values.data().begin() + rows * d, s.begin());
      x_tilde = g.add(x, BasicTensor<T>(x.shape(), std::move(s)));
    }
    auto up = m.backbone.forward_upper(g, x_tilde, r.cache);
    st.chunk_forwards += r.plan.n_chunks() - committed;

    std::vector<ThoughtSequence> zs;
    std::size_t first = K;
    for (std::size_t i = committed; i < K; ++i) {
      auto h = g.slice_rows(up.h_out, (i - committed) * c, (i - committed + 1) * c);
      auto z = m.has_thinking ? m.think.generate_thought(h) : ThoughtSequence::empty();
      if (m.has_thinking) ++st.thought_calls;
      r.truncations += z.truncated ? 1 : 0;
      const bool nontrivial = !z.trivial();
      zs.push_back(std::move(z));
      if (nontrivial && first == K) {
        first = i;
        if (opt.lazy) break;
      }
    }

    const std::size_t stop = first == K ? r.plan.n_chunks() : first + 1;
    const std::size_t keep_tokens = std::min(ids.size(), stop * c);
    const std::size_t used_rows = keep_tokens - begin;
    logits.insert(logits.end(), up.logits.data().begin(),
                  up.logits.data().begin() + used_rows * V);
    for (std::size_t i = committed; i < std::min(stop, K); ++i) {
      auto& z = zs[i - committed];
      auto s = z.trivial() ? m.zero_state() : m.comp.compress(z);
      if (!s.trivial && i != first)
        throw CacheError("speculative prefill: committed chunk " + std::to_string(i) +
                         " contradicts its verification");
      r.trace.thoughts.push_back(std::move(z));
      r.trace.states.push_back(s);
      r.state = s;
    }
    st.round_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t_round).count());
    if (first == K) {
      if (r.plan.tail > 0) {
        r.tail_h_out.assign(up.h_out.data().begin() + (K - committed) * c * d,
                            up.h_out.data().end());
      }
      break;
    }
    st.corrected.push_back(first);
    ++st.nontrivial;
    cache_truncate(r.cache, keep_tokens);
    committed = first + 1;
  }
  r.thought_calls = st.thought_calls;
  r.logits = BasicTensor<T>({ids.size(), V}, std::move(logits));
  st.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t_start).count();
  return out;
}

}  // namespace thinkstate

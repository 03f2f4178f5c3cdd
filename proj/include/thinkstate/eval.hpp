#pragma once

// Greedy evaluation with exact-match grading, per-op-count buckets and
// latency measurement.

#include <algorithm>
#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "thinkstate/speculative.hpp"
#include "thinkstate/supervision.hpp"

namespace thinkstate {

struct EvalOptions {
  bool speculative = false;
  bool lazy = false;
  bool freeze_state = false;
  bool cot = false;    // model writes a trace before the answer
  bool align = true;   // alignment padding for Thinking States queries
  bool trace = false;  // keep the per-chunk trace text
  std::size_t max_new = 0;  // 0: derived from the record
};

struct Prediction {
  std::string text;       // detokenized answer span
  std::string generated;  // everything the model wrote
  bool correct = false;
  int n_ops = 0;
  double ms = 0;
  std::size_t generated_tokens = 0;
  PrefillStats stats;
  std::size_t nontrivial = 0;  // over the query's full chunks
  std::size_t chunks = 0;
  std::string trace;           // query chunks followed by any written while decoding
};

// Query ids fed at inference time (same prefix the training encoding uses).
inline std::vector<int> query_ids(const Vocabulary& vocab, const Record& r,
                                  const ModelConfig& cfg, bool thinking, bool align) {
  if (!thinking) return vocab.tokenize(strip_markers(r.text));
  const auto a = parse_indicators(vocab, r.text, r.steps);
  std::vector<int> ids(alignment_padding(a, cfg.chunk_size, align), special::kPad);
  ids.insert(ids.end(), a.clean_ids.begin(), a.clean_ids.end());
  return ids;
}

inline std::size_t default_max_new(const Vocabulary& vocab, const Record& r, bool cot) {
  const std::size_t answer = vocab.tokenize(r.answer).size();
  if (!cot) return answer + 8;
  return vocab.tokenize(render_cot(r)).size() + 8;
}

// The answer span of a CoT generation follows the first "." token.
inline std::vector<int> answer_span(const Vocabulary& vocab, const std::vector<int>& gen,
                                    bool cot) {
  std::vector<int> out = gen;
  if (!out.empty() && out.back() == special::kEos) out.pop_back();
  if (!cot) return out;
  const int dot = vocab.id(".");
  auto it = std::find(out.begin(), out.end(), dot);
  if (it == out.end()) return {};
  return std::vector<int>(it + 1, out.end());
}

template <typename T>
Prediction predict(const ThinkStateModel<T>& m, const Vocabulary& vocab, const Record& r,
                   const EvalOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto ids = query_ids(vocab, r, m.config(), m.has_thinking, opt.align);
  DecodeOptions dec;
  dec.max_new = opt.max_new ? opt.max_new : default_max_new(vocab, r, opt.cot);
  dec.freeze_state = opt.freeze_state;
  Prediction p;
  p.n_ops = r.n_ops;
  const auto t0 = clock::now();
  PrefillResult<T> pre;
  if (opt.speculative && m.has_thinking) {
    SpeculativeOptions so;
    so.lazy = opt.lazy;
    auto res = speculative_prefill(m, ids, so);
    pre = std::move(res.prefill);
    p.stats = res.stats;
  } else {
    pre = recurrent_prefill(m, ids);
  }
  p.nontrivial = pre.trace.nontrivial_count();
  p.chunks = pre.trace.size();
  auto out = generate_answer(m, pre, dec);
  p.ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  p.generated_tokens = out.tokens.size();
  p.generated = vocab.detokenize(out.tokens);
  p.text = vocab.detokenize(answer_span(vocab, out.tokens, opt.cot));
  p.correct = p.text == r.answer;
  if (opt.trace) p.trace = format_trace(pre.trace, vocab);
  return p;
}

struct BucketStats {
  std::size_t n = 0;
  std::size_t correct = 0;
  std::vector<double> ms;
  double accuracy() const { return n ? static_cast<double>(correct) / n : 0.0; }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EvalSummary {
  std::vector<Prediction> predictions;
  std::map<int, BucketStats> by_ops;
  BucketStats all;
};

inline EvalSummary summarize(std::vector<Prediction> predictions) {
  EvalSummary s;
  for (const auto& p : predictions)
    for (auto* b : {&s.all, &s.by_ops[p.n_ops]}) {
      ++b->n;
      b->correct += p.correct ? 1 : 0;
      b->ms.push_back(p.ms);
    }
  s.predictions = std::move(predictions);
  return s;
}

template <typename T>
EvalSummary evaluate(const ThinkStateModel<T>& m, const Vocabulary& vocab,
                     const std::vector<Record>& records, const EvalOptions& opt) {
  std::vector<Prediction> preds;
  preds.reserve(records.size());
  for (const auto& r : records) preds.push_back(predict(m, vocab, r, opt));
  return summarize(std::move(preds));
}

// Median end-to-end latency over the records after discarding `warmup`
// leading queries.
template <typename T>
double median_latency_ms(const ThinkStateModel<T>& m, const Vocabulary& vocab,
                         const std::vector<Record>& records, const EvalOptions& opt,
                         std::size_t warmup = 5) {
  std::vector<double> ms;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto p = predict(m, vocab, records[i], opt);
    if (i >= warmup) ms.push_back(p.ms);
  }
  return median(ms);
}

}  // namespace thinkstate

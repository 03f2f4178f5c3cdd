#pragma once

// Chunk-level gold thoughts from indicator-marked text, plus the JSON-lines
// dataset record and the training encodings built on top of it.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "thinkstate/tasks.hpp"
#include "thinkstate/thinking.hpp"
#include "thinkstate/vocab.hpp"

namespace thinkstate {

inline constexpr const char* kMarker = "<T>";

struct AlignedText {
  std::string raw;
  std::vector<std::string> steps;
  std::string clean_text;
  std::vector<int> clean_ids;
  std::vector<std::size_t> positions;     // clean-token index following each marker
  std::vector<std::size_t> char_offsets;  // marker offsets in clean_text
  std::vector<std::size_t> raw_positions; // marker token index in the marked stream
};

inline std::string strip_markers(const std::string& marked) {
  std::string out;
  std::size_t i = 0;
  for (;;) {
    auto j = marked.find(kMarker, i);
    out.append(marked, i, j == std::string::npos ? std::string::npos : j - i);
    if (j == std::string::npos) break;
    i = j + 3;
  }
  return out;
}

inline std::string insert_markers(const std::string& clean, const std::vector<std::size_t>& offsets) {
  std::string out;
  std::size_t prev = 0;
  for (auto o : offsets) {
    out.append(clean, prev, o - prev);
    out += kMarker;
    prev = o;
  }
  out.append(clean, prev, std::string::npos);
  return out;
}

inline AlignedText parse_indicators(const Vocabulary& vocab, const std::string& marked,
                                    const std::vector<std::string>& steps) {
  AlignedText a;
  a.raw = marked;
  a.steps = steps;
  const auto marked_ids = vocab.tokenize(marked);
  for (int id : marked_ids) {
    if (id == special::kIndicator) {
      a.raw_positions.push_back(a.positions.size() + a.clean_ids.size());
      a.positions.push_back(a.clean_ids.size());
    } else {
      a.clean_ids.push_back(id);
    }
  }
  if (a.positions.size() != steps.size())
    throw AlignmentError("text has " + std::to_string(a.positions.size()) + " <T> markers but " +
                         std::to_string(steps.size()) + " reasoning steps were given");
  a.clean_text = strip_markers(marked);
  std::size_t removed = 0, from = 0;
  for (;;) {
    auto j = marked.find(kMarker, from);
    if (j == std::string::npos) break;
    a.char_offsets.push_back(j - removed);
    removed += 3;
    from = j + 3;
  }
  if (vocab.tokenize(a.clean_text) != a.clean_ids)
    throw AlignmentError("stripping markers changes the tokenization of: " + marked);
  return a;
}

struct ReasoningArray {
  std::vector<std::optional<std::string>> entries;  // one per clean token
  std::vector<std::size_t> landing;                 // slot of each step
};

// Each step lands on the token preceding its marker. Consecutive markers take
// consecutive slots in order; steps that would run past the last token are
// joined onto it with <SEP>.
inline ReasoningArray build_reasoning_array(std::size_t clean_len,
                                            const std::vector<std::size_t>& positions,
                                            const std::vector<std::string>& steps) {
  if (positions.size() != steps.size())
    throw AlignmentError(std::to_string(positions.size()) + " marker positions but " +
                         std::to_string(steps.size()) + " steps");
  ReasoningArray r;
  r.entries.resize(clean_len);
  std::optional<std::size_t> prev;
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const std::size_t p = positions[j];
    if (j > 0 && p < positions[j - 1])
      throw SupervisionError("marker positions are not sorted");
    if (p == 0)
      throw SupervisionError("step '" + steps[j] + "' has no preceding token to land on");
    if (p > clean_len) throw SupervisionError("marker position beyond the text");
    std::size_t slot = p - 1;
    if (prev && slot <= *prev) slot = *prev + 1;
    if (slot >= clean_len) slot = clean_len - 1;
    auto& e = r.entries[slot];
    e = e ? *e + "<SEP>" + steps[j] : steps[j];
    r.landing.push_back(slot);
    prev = slot;
  }
  return r;
}

// One gold thought per chunk of `offset + array` tokens (the array starts at
// token `offset`, earlier positions carry no steps). The last element covers
// the open tail when n_total is not a multiple of c.
inline std::vector<ThoughtSequence> chunk_targets(const Vocabulary& vocab,
                                                  const ReasoningArray& array, std::size_t c,
                                                  std::size_t max_think_len,
                                                  std::size_t offset = 0,
                                                  std::size_t n_total = 0) {
  if (n_total == 0) n_total = offset + array.entries.size();
  const std::size_t n_chunks = (n_total + c - 1) / c;
  std::vector<std::string> text(n_chunks);
  for (std::size_t i = 0; i < array.entries.size(); ++i) {
    if (!array.entries[i]) continue;
    auto& t = text[(offset + i) / c];
    t += (t.empty() ? "" : " ") + *array.entries[i];
  }
  std::vector<ThoughtSequence> out;
  for (std::size_t k = 0; k < n_chunks; ++k) {
    ThoughtSequence z;
    z.ids = vocab.tokenize(text[k]);
    z.ids.push_back(special::kEosThink);
    if (z.ids.size() > max_think_len)
      throw SupervisionError("chunk " + std::to_string(k) + " target '" + text[k] + "' has " +
                             std::to_string(z.ids.size()) + " tokens, above max_think_len " +
                             std::to_string(max_think_len));
    out.push_back(std::move(z));
  }
  return out;
}

// ---- dataset records ------------------------------------------------------

struct Record {
  std::string text;
  std::vector<std::string> steps;
  std::string answer;
  std::string task;
  int n_ops = 0;
  std::uint64_t seed = 0;
};

inline Record to_record(const TaskSample& s) {
  return {s.text, s.steps, s.answer, s.task, s.n_ops, s.seed};
}

inline std::string record_to_json(const Record& r) {
  nlohmann::ordered_json j;
  j["text"] = r.text;
  j["steps"] = r.steps;
  j["answer"] = r.answer;
  j["meta"] = {{"task", r.task}, {"n_ops", r.n_ops}, {"seed", r.seed}};
  return j.dump();
}

inline Record record_from_json(const std::string& line) {
  auto j = nlohmann::json::parse(line);
  Record r;
  r.text = j.at("text").get<std::string>();
  r.steps = j.at("steps").get<std::vector<std::string>>();
  r.answer = j.at("answer").get<std::string>();
  const auto& m = j.at("meta");
  r.task = m.at("task").get<std::string>();
  r.n_ops = m.at("n_ops").get<int>();
  r.seed = m.at("seed").get<std::uint64_t>();
  return r;
}

inline void write_jsonl(const std::string& path, const std::vector<Record>& recs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path);
  for (const auto& r : recs) out << record_to_json(r) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<Record> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path);
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Explicit trace the CoT baseline is trained to write before the answer.
inline std::string render_cot(const Record& r) {
  std::string cot = r.task == "parity" ? "heads" : "";
  for (const auto& s : r.steps) cot += (cot.empty() ? "" : " ") + s;
  return cot + ". " + r.answer;
}

// ---- encodings ------------------------------------------------------------

struct EncodedExample {
  std::vector<int> tokens;   // training sequence
  std::vector<int> targets;  // tokens shifted left by one
  std::vector<bool> mask;    // loss positions
  std::size_t query_len = 0; // prefix fed at inference time
  std::vector<int> answer_ids;
  std::vector<ThoughtSequence> gold;  // one per full chunk (thinkstate only)
  std::size_t n_pad = 0;
  int n_ops = 0;
};

// <PAD> tokens placed before the query so that the first marker falls on a
// chunk boundary, making every operation occupy whole chunks.
inline std::size_t alignment_padding(const AlignedText& a, std::size_t c, bool align) {
  if (!align || a.positions.empty()) return 0;
  return (c - a.positions.front() % c) % c;
}

namespace detail {
inline void finish_targets(EncodedExample& e, std::size_t loss_from) {
  const std::size_t n = e.tokens.size();
  e.targets.assign(n, special::kPad);
  e.mask.assign(n, false);
  for (std::size_t p = 0; p + 1 < n; ++p) {
    e.targets[p] = e.tokens[p + 1];
    e.mask[p] = p + 1 >= loss_from;
  }
}
}  // namespace detail

inline EncodedExample encode_thinkstate(const Vocabulary& vocab, const Record& r,
                                        const ModelConfig& cfg, bool align = true,
                                        bool full_span_loss = false) {
  const auto a = parse_indicators(vocab, r.text, r.steps);
  const auto arr = build_reasoning_array(a.clean_ids.size(), a.positions, a.steps);
  EncodedExample e;
  e.n_ops = r.n_ops;
  e.n_pad = alignment_padding(a, cfg.chunk_size, align);
  e.tokens.assign(e.n_pad, special::kPad);
  e.tokens.insert(e.tokens.end(), a.clean_ids.begin(), a.clean_ids.end());
  e.query_len = e.tokens.size();
  e.answer_ids = vocab.tokenize(r.answer);
  e.tokens.insert(e.tokens.end(), e.answer_ids.begin(), e.answer_ids.end());
  e.tokens.push_back(special::kEos);
  auto targets = chunk_targets(vocab, arr, cfg.chunk_size, cfg.max_think_len, e.n_pad,
                               e.tokens.size());
  targets.resize(e.tokens.size() / cfg.chunk_size);
  e.gold = std::move(targets);
  detail::finish_targets(e, full_span_loss ? e.n_pad + 1 : e.query_len);
  return e;
}

// Plain next-token encoding for the baselines: query, optional CoT, answer.
inline EncodedExample encode_plain(const Vocabulary& vocab, const Record& r, bool with_cot) {
  EncodedExample e;
  e.n_ops = r.n_ops;
  e.tokens = vocab.tokenize(strip_markers(r.text));
  e.query_len = e.tokens.size();
  e.answer_ids = vocab.tokenize(r.answer);
  const auto body = vocab.tokenize(with_cot ? render_cot(r) : r.answer);
  e.tokens.insert(e.tokens.end(), body.begin(), body.end());
  e.tokens.push_back(special::kEos);
  detail::finish_targets(e, e.query_len);
  return e;
}

}  // namespace thinkstate

#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "thinkstate/error.hpp"

namespace thinkstate {

namespace special {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kEosThink = 3;
inline constexpr int kSep = 4;
inline constexpr int kIndicator = 5;
inline constexpr int kCount = 6;
}  // namespace special

// Closed word-level vocabulary. Words are split on whitespace and
// punctuation; a word missing from the vocabulary is split greedily into a
// known prefix plus "##" continuation pieces (e.g. "flips" -> "flip" "##s").
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  // `words` excludes the special tokens, which always occupy ids 0..5.
  explicit Vocabulary(const std::vector<std::string>& words) {
    for (const char* s : {"<PAD>", "<BOS>", "<EOS>", "<EOS_think>", "<SEP>", "<T>"})
      add(s);
    for (const auto& w : words) add(w);
  }

  // Every word the synthetic task generators can emit.
  static Vocabulary task_vocabulary() {
    std::vector<std::string> words = {
        "The",   "the",  "coin",      "starts", "at",   "state",  "heads",
        "tails", "Alice", "Bob",      "doesn't", "flip", "##s",   ".",
        "final", "of",   "is",        "Track",  "variables", "values", ":",
        ";",     "=",    "+",         "Final",  ",",    "a",      "b",
        "c",     "d",    "e"};
    for (int d = 0; d <= 9; ++d) words.push_back(std::to_string(d));
    return Vocabulary(words);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary file " + path);
    std::vector<std::string> all;
    std::string line;
    while (std::getline(in, line)) all.push_back(line);
    if (all.size() < special::kCount) throw VocabularyError("vocabulary file too short: " + path);
    return Vocabulary(std::vector<std::string>(all.begin() + special::kCount, all.end()));
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file " + path);
    for (const auto& w : words_) out << w << '\n';
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::optional<int> find(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int id(std::string_view w) const {
    if (auto i = find(w)) return *i;
    throw VocabularyError("unknown word '" + std::string(w) + "'");
  }

  const std::string& word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary");
    return words_[static_cast<std::size_t>(id)];
  }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const unsigned char ch = static_cast<unsigned char>(text[i]);
      if (std::isspace(ch)) {
        ++i;
        continue;
      }
      if (ch == '<') {
        auto close = text.find('>', i);
        if (close != std::string_view::npos) {
          auto lit = text.substr(i, close - i + 1);
          if (lit == "<eos>") {
            out.push_back(special::kEosThink);
            i = close + 1;
            continue;
          }
          if (auto sid = find(lit); sid && *sid < special::kCount) {
            out.push_back(*sid);
            i = close + 1;
            continue;
          }
        }
      }
      if (is_word_char(ch)) {
        std::size_t j = i;
        while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
        split_word(text.substr(i, j - i), out);
        i = j;
        continue;
      }
      out.push_back(id(text.substr(i, 1)));
      ++i;
    }
    return out;
  }

  std::string detokenize(std::span<const int> ids) const {
    std::string out;
    bool glue_next = true;
    for (int t : ids) {
      if (t == special::kPad || t == special::kBos) continue;
      const std::string& w = word(t);
      const bool piece = w.size() > 2 && w[0] == '#' && w[1] == '#';
      const bool glue_before = piece || w == "." || w == "," || w == ";" ||
                               w == ":" || w == "=" || w == "+";
      if (!out.empty() && !glue_before && !glue_next) out += ' ';
      out += piece ? w.substr(2) : w;
      glue_next = (w == "=" || w == "+");
    }
    return out;
  }

  // Thought rendering used in logs and traces: words followed by "<eos>".
  std::string render_thought(std::span<const int> ids) const {
    std::vector<int> body;
    bool terminal = false;
    for (int t : ids) {
      if (t == special::kEosThink) {
        terminal = true;
        break;
      }
      body.push_back(t);
    }
    return detokenize(body) + (terminal ? "<eos>" : "");
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& w : words_) {
      for (char c : w) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
      }
      h ^= 0xff;
      h *= 1099511628211ull;
    }
    return h;
  }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  static bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\''; }

  void add(const std::string& w) {
    if (index_.count(w)) throw VocabularyError("duplicate vocabulary word '" + w + "'");
    index_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  }

  void split_word(std::string_view w, std::vector<int>& out) const {
    if (auto i = find(w)) {
      out.push_back(*i);
      return;
    }
    std::vector<int> pieces;
    std::size_t pos = 0;
    while (pos < w.size()) {
      const std::string prefix = pos == 0 ? "" : "##";
      std::size_t len = w.size() - pos;
      std::optional<int> hit;
      for (; len > 0; --len) {
        hit = find(prefix + std::string(w.substr(pos, len)));
        if (hit) break;
      }
      if (!hit) throw VocabularyError("unknown word '" + std::string(w) + "'");
      pieces.push_back(*hit);
      pos += len;
    }
    out.insert(out.end(), pieces.begin(), pieces.end());
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace thinkstate

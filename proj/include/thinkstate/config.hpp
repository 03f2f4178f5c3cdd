#pragma once

#include <cstddef>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "thinkstate/error.hpp"

namespace thinkstate {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct KeyValueEntry {
  std::string key;  // "section.key" when declared under [section]
  std::string value;
  int line = 0;
};

// Flat key = value text with optional [section] headers and '#' comments.
inline std::vector<KeyValueEntry> parse_key_values(std::istream& in) {
  std::vector<KeyValueEntry> out;
  std::string line, section;
  std::vector<std::string> problems;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back("line " + std::to_string(lineno) + ": malformed section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      problems.push_back("line " + std::to_string(lineno) + ": empty key");
      continue;
    }
    out.push_back({section.empty() ? key : section + "." + key,
                   trim(line.substr(eq + 1)), lineno});
  }
  if (!problems.empty()) {
    std::string msg = "config parse errors:";
    for (auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return out;
}

inline std::vector<KeyValueEntry> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  return parse_key_values(in);
}

namespace detail {
template <typename V>
V parse_value(const std::string& s, const KeyValueEntry& e) {
  std::istringstream is(s);
  V v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) {
    throw ConfigError("line " + std::to_string(e.line) + ": bad value '" + s +
                      "' for " + e.key);
  }
  return v;
}
template <>
inline bool parse_value<bool>(const std::string& s, const KeyValueEntry& e) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("line " + std::to_string(e.line) + ": bad boolean '" + s +
                    "' for " + e.key);
}
template <>
inline std::string parse_value<std::string>(const std::string& s, const KeyValueEntry&) {
  return s;
}
}  // namespace detail

// Binds keys to variables; apply() rejects unknown keys, listing line numbers.
class KeyBinder {
 public:
  template <typename V>
  KeyBinder& bind(const std::string& key, V& target) {
    setters_[key] = [&target](const KeyValueEntry& e) {
      target = detail::parse_value<V>(e.value, e);
    };
    return *this;
  }

  bool knows(const std::string& key) const { return setters_.count(key) != 0; }

  void apply(const std::vector<KeyValueEntry>& entries) const {
    std::string unknown;
    for (const auto& e : entries) {
      auto it = setters_.find(e.key);
      if (it == setters_.end()) {
        unknown += "\n  line " + std::to_string(e.line) + ": unknown key '" + e.key + "'";
        continue;
      }
      it->second(e);
    }
    if (!unknown.empty()) throw ConfigError("config rejected:" + unknown);
  }

 private:
  std::map<std::string, std::function<void(const KeyValueEntry&)>> setters_;
};

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_head = 32;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 64;
  std::size_t chunk_size = 6;
  std::size_t l_in = 1;   // tap after this block (1-based)
  std::size_t l_out = 3;  // tap after this block; defaults to n_layers - 1
  std::size_t max_positions = 1024;
  double rope_theta = 10000.0;
  std::size_t max_think_len = 32;
  double norm_eps = 1e-6;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (n_layers < 2) fail("n_layers must be at least 2");
    if (!(l_in >= 1 && l_in < l_out && l_out <= n_layers - 1))
      fail("need 1 <= L_in < L_out <= n_layers - 1, got L_in=" + std::to_string(l_in) +
           " L_out=" + std::to_string(l_out) + " n_layers=" + std::to_string(n_layers));
    if (d_model != n_heads * d_head)
      fail("d_model (" + std::to_string(d_model) + ") != n_heads * d_head (" +
           std::to_string(n_heads * d_head) + ")");
    if (d_head % 2 != 0) fail("d_head must be even, got " + std::to_string(d_head));
    if (chunk_size < 1) fail("chunk_size must be >= 1");
    if (vocab_size < 6) fail("vocab_size too small for the special tokens");
    if (max_think_len < 1) fail("max_think_len must be >= 1");
    if (d_ff < 1 || max_positions < 1) fail("d_ff and max_positions must be positive");
    if (!(norm_eps > 0)) fail("norm_eps must be positive");
  }

  void bind(KeyBinder& b, const std::string& prefix) {
    b.bind(prefix + "d_model", d_model)
        .bind(prefix + "n_layers", n_layers)
        .bind(prefix + "n_heads", n_heads)
        .bind(prefix + "d_head", d_head)
        .bind(prefix + "d_ff", d_ff)
        .bind(prefix + "vocab_size", vocab_size)
        .bind(prefix + "chunk_size", chunk_size)
        .bind(prefix + "l_in", l_in)
        .bind(prefix + "l_out", l_out)
        .bind(prefix + "max_positions", max_positions)
        .bind(prefix + "rope_theta", rope_theta)
        .bind(prefix + "max_think_len", max_think_len)
        .bind(prefix + "norm_eps", norm_eps);
  }

  std::vector<std::pair<std::string, std::string>> to_pairs() const {
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    return {{"d_model", std::to_string(d_model)},
            {"n_layers", std::to_string(n_layers)},
            {"n_heads", std::to_string(n_heads)},
            {"d_head", std::to_string(d_head)},
            {"d_ff", std::to_string(d_ff)},
            {"vocab_size", std::to_string(vocab_size)},
            {"chunk_size", std::to_string(chunk_size)},
            {"l_in", std::to_string(l_in)},
            {"l_out", std::to_string(l_out)},
            {"max_positions", std::to_string(max_positions)},
            {"rope_theta", num(rope_theta)},
            {"max_think_len", std::to_string(max_think_len)},
            {"norm_eps", num(norm_eps)}};
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace thinkstate

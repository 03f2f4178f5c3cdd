#pragma once

// Checkpoint archive: a text header (magic, model config, flags, vocabulary)
// followed by parameter records, each a "name dims..." line and the values as
// little-endian float32 in row-major order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "thinkstate/model.hpp"
#include "thinkstate/vocab.hpp"

namespace thinkstate {

inline constexpr const char* kCheckpointMagic = "thinkstate-checkpoint 1";

struct Checkpoint {
  ThinkStateModel<float> model;
  Vocabulary vocab;
  std::string mode;  // training mode that produced the weights
};

namespace detail {

inline void write_f32(std::ostream& out, std::span<const float> v) {
  for (float x : v) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16),
                          static_cast<unsigned char>(u >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
}

inline void read_f32(std::istream& in, std::span<float> v, const std::string& name) {
  for (float& x : v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
      throw IoError("checkpoint truncated inside parameter " + name);
    const std::uint32_t u = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                            std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
    x = std::bit_cast<float>(u);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ThinkStateModel<float>& m,
                            const Vocabulary& vocab, const std::string& mode) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << kCheckpointMagic << '\n';
  for (auto& [k, v] : m.config().to_pairs()) out << "config " << k << ' ' << v << '\n';
  out << "has_thinking " << (m.has_thinking ? 1 : 0) << '\n';
  out << "mode " << mode << '\n';
  out << "vocab " << vocab.size() << '\n';
  for (const auto& w : vocab.words()) out << w << '\n';
  out << "end_header\n";
  m.visit_parameters([&](const std::string& name, Tensor& t) {
    out << name;
    for (auto s : t.shape()) out << ' ' << s;
    out << '\n';
    detail::write_f32(out, t.data());
  });
  if (!out) throw IoError("write failed for checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw IoError(path + " is not a checkpoint (bad magic line)");
  std::vector<KeyValueEntry> entries;
  bool has_thinking = true;
  std::string mode;
  std::vector<std::string> words;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line == "end_header") break;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "config") {
      std::string k, v;
      is >> k >> v;
      entries.push_back({k, v, lineno});
    } else if (tag == "has_thinking") {
      int v = 1;
      is >> v;
      has_thinking = v != 0;
    } else if (tag == "mode") {
      is >> mode;
    } else if (tag == "vocab") {
      std::size_t n = 0;
      is >> n;
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw IoError("checkpoint vocabulary truncated");
        ++lineno;
        words.push_back(line);
      }
    } else {
      throw IoError(path + ":" + std::to_string(lineno) + ": unexpected header line '" + line + "'");
    }
  }
  ModelConfig cfg;
  KeyBinder binder;
  cfg.bind(binder, "");
  binder.apply(entries);
  cfg.validate();
  if (words.size() < special::kCount) throw IoError("checkpoint has no vocabulary");
  Checkpoint ck{ThinkStateModel<float>(cfg, 0, has_thinking),
                Vocabulary(std::vector<std::string>(words.begin() + special::kCount, words.end())),
                mode};
  std::map<std::string, Tensor*> by_name;
  ck.model.visit_parameters([&](const std::string& name, Tensor& t) { by_name[name] = &t; });
  std::size_t loaded = 0;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::string name;
    is >> name;
    Shape shape;
    std::size_t s;
    while (is >> s) shape.push_back(s);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint has unknown parameter " + name);
    if (it->second->shape() != shape)
      throw IoError("parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                    shape_str(it->second->shape()));
    detail::read_f32(in, it->second->data(), name);
    ++loaded;
  }
  if (loaded != by_name.size())
    throw IoError("checkpoint holds " + std::to_string(loaded) + " of " +
                  std::to_string(by_name.size()) + " parameters");
  return ck;
}

}  // namespace thinkstate

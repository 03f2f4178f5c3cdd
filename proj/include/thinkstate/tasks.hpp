#pragma once

// Parity and variable-assignment generators with their exact oracles.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "thinkstate/error.hpp"

namespace thinkstate {

struct TaskSample {
  std::string task;                // "parity" or "vars"
  std::string text;                // query with <T> after every operation
  std::vector<std::string> steps;  // one per operation
  std::string answer;
  std::string cot;                 // explicit trace followed by the answer
  int n_ops = 0;
  std::uint64_t seed = 0;
};

// Seeded integer draws that depend only on the raw 64-bit engine output.
class TaskRng {
 public:
  explicit TaskRng(std::uint64_t seed) : gen_(seed) {}
  // Uniform on [lo, hi].
  int uniform(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }
  bool coin() { return (gen_() >> 63) != 0; }
  std::uint64_t next() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// ---- parity ---------------------------------------------------------------

struct ParityResult {
  bool heads = true;                // final state
  std::vector<std::string> states;  // state after each operation
};

inline const char* coin_word(bool heads) { return heads ? "heads" : "tails"; }

inline ParityResult oracle_parity(const std::vector<bool>& flips) {
  ParityResult r;
  for (bool f : flips) {
    r.heads = r.heads != f;
    r.states.push_back(coin_word(r.heads));
  }
  return r;
}

inline std::string parity_answer(bool heads) {
  return std::string("The final state of the coin is ") + coin_word(heads) + ".";
}

inline TaskSample render_parity(const std::vector<bool>& flips, std::uint64_t seed = 0) {
  TaskSample s;
  s.task = "parity";
  s.n_ops = static_cast<int>(flips.size());
  s.seed = seed;
  s.text = "The coin starts at state heads.";
  for (std::size_t i = 0; i < flips.size(); ++i) {
    s.text += i % 2 == 0 ? " Alice" : " Bob";
    s.text += flips[i] ? " flips the coin.<T>" : " doesn't flip the coin.<T>";
  }
  auto res = oracle_parity(flips);
  s.steps = res.states;
  s.answer = parity_answer(res.heads);
  s.cot = "heads";
  for (const auto& st : s.steps) s.cot += " " + st;
  s.cot += ". " + s.answer;
  return s;
}

inline TaskSample gen_parity(int n_ops, std::uint64_t seed) {
  if (n_ops < 1) throw ContractError("gen_parity: n_ops must be >= 1");
  TaskRng rng(seed);
  std::vector<bool> flips(static_cast<std::size_t>(n_ops));
  for (auto&& f : flips) f = rng.coin();
  return render_parity(flips, seed);
}

// ---- variable assignment --------------------------------------------------

struct VarOp {
  char target = 'a';
  bool literal = false;  // x = x + k when true, x = x + y otherwise
  char source = 'a';
  int k = 0;
};

struct VarProgram {
  std::vector<std::pair<char, int>> init;
  std::vector<VarOp> ops;
  int modulus = 10;
};

struct VarsResult {
  std::map<char, int> values;
  std::vector<std::string> steps;  // "x=v" after each operation
};

inline VarsResult oracle_vars(const VarProgram& p) {
  if (p.modulus < 1) throw ProgramError("modulus must be positive");
  VarsResult r;
  for (auto [name, v] : p.init) r.values[name] = ((v % p.modulus) + p.modulus) % p.modulus;
  auto get = [&](char name) {
    auto it = r.values.find(name);
    if (it == r.values.end())
      throw ProgramError(std::string("reference to undeclared variable '") + name + "'");
    return it->second;
  };
  for (const auto& op : p.ops) {
    const int base = get(op.target);
    const int add = op.literal ? op.k : get(op.source);
    const int v = ((base + add) % p.modulus + p.modulus) % p.modulus;
    r.values[op.target] = v;
    r.steps.push_back(std::string(1, op.target) + "=" + std::to_string(v));
  }
  return r;
}

inline std::string vars_answer(const VarProgram& p, const VarsResult& r) {
  std::string a = "Final values:";
  for (auto [name, v0] : p.init) {
    (void)v0;
    a += " ";
    a += name;
    a += "=" + std::to_string(r.values.at(name));
  }
  return a;
}

inline TaskSample render_vars(const VarProgram& p, std::uint64_t seed = 0) {
  TaskSample s;
  s.task = "vars";
  s.n_ops = static_cast<int>(p.ops.size());
  s.seed = seed;
  s.text = "Track the variables values:";
  for (std::size_t i = 0; i < p.init.size(); ++i) {
    s.text += " ";
    s.text += p.init[i].first;
    s.text += "=" + std::to_string(p.init[i].second);
    if (i + 1 < p.init.size()) s.text += ";";
  }
  for (const auto& op : p.ops) {
    s.text += " ";
    s.text += op.target;
    s.text += "=";
    s.text += op.target;
    s.text += "+";
    s.text += op.literal ? std::to_string(op.k) : std::string(1, op.source);
    s.text += "<T>";
  }
  auto r = oracle_vars(p);
  s.steps = r.steps;
  s.answer = vars_answer(p, r);
  for (std::size_t i = 0; i < s.steps.size(); ++i) s.cot += (i ? " " : "") + s.steps[i];
  s.cot += ". " + s.answer;
  return s;
}

inline VarProgram random_var_program(int n_ops, int n_vars, TaskRng& rng, int modulus = 10) {
  VarProgram p;
  p.modulus = modulus;
  for (int i = 0; i < n_vars; ++i)
    p.init.push_back({static_cast<char>('a' + i), rng.uniform(0, modulus - 1)});
  for (int i = 0; i < n_ops; ++i) {
    VarOp op;
    op.target = static_cast<char>('a' + rng.uniform(0, n_vars - 1));
    op.literal = rng.coin();
    if (op.literal) {
      op.k = rng.uniform(0, 9);
    } else {
      int src = rng.uniform(0, n_vars - 2);
      if (src >= op.target - 'a') ++src;
      op.source = static_cast<char>('a' + src);
    }
    p.ops.push_back(op);
  }
  return p;
}

inline TaskSample gen_vars(int n_ops, int n_vars, std::uint64_t seed, int modulus = 10) {
  if (n_ops < 1) throw ContractError("gen_vars: n_ops must be >= 1");
  if (n_vars < 2 || n_vars > 5) throw ContractError("gen_vars: n_vars must be in [2, 5]");
  TaskRng rng(seed);
  return render_vars(random_var_program(n_ops, n_vars, rng, modulus), seed);
}

// ---- datasets -------------------------------------------------------------

struct TaskSpec {
  std::string task = "parity";
  int n_vars = 3;
  int modulus = 10;
};

inline TaskSample gen_task(const TaskSpec& t, int n_ops, std::uint64_t seed) {
  if (t.task == "parity") return gen_parity(n_ops, seed);
  if (t.task == "vars") return gen_vars(n_ops, t.n_vars, seed, t.modulus);
  throw ConfigError("unknown task '" + t.task + "' (expected parity or vars)");
}

// n samples with op-counts uniform on [lo, hi]; each sample gets its own seed
// drawn from the dataset seed.
inline std::vector<TaskSample> gen_dataset(const TaskSpec& t, std::size_t n, int lo, int hi,
                                           std::uint64_t seed) {
  if (lo < 1 || hi < lo) throw ContractError("gen_dataset: need 1 <= lo <= hi");
  TaskRng rng(seed);
  std::vector<TaskSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int ops = rng.uniform(lo, hi);
    out.push_back(gen_task(t, ops, rng.next()));
  }
  return out;
}

}  // namespace thinkstate

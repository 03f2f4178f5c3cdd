#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "thinkstate/experiment.hpp"
#include "thinkstate/report.hpp"

using namespace thinkstate;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::string config;
  std::string out;
};

// Optional [section] of the global --config file, as a binder input.
std::vector<KeyValueEntry> section_entries(const Globals& g, const std::string& section) {
  if (g.config.empty()) return {};
  std::vector<KeyValueEntry> out;
  for (const auto& e : read_key_value_file(g.config))
    if (e.key.rfind(section + ".", 0) == 0) out.push_back(e);
  return out;
}

void require_out(const Globals& g, const char* verb) {
  if (g.out.empty()) throw ConfigError(std::string(verb) + " needs --out");
}

// ---- gen --------------------------------------------------------------------

struct GenArgs {
  std::string task = "parity";
  std::size_t n = 1000;
  int n_max = 10;
  std::vector<int> ood;
  int n_vars = 3;
  int modulus = 10;
};

int cmd_gen(const Globals& g, GenArgs a) {
  require_out(g, "gen");
  KeyBinder b;
  b.bind("gen.task", a.task)
      .bind("gen.n", a.n)
      .bind("gen.n_max", a.n_max)
      .bind("gen.n_vars", a.n_vars)
      .bind("gen.modulus", a.modulus);
  b.apply(section_entries(g, "gen"));
  int lo = 1, hi = a.n_max;
  if (!a.ood.empty()) lo = a.ood[0], hi = a.ood[1];
  TaskSpec spec{a.task, a.n_vars, a.modulus};
  std::vector<Record> recs;
  for (const auto& s : gen_dataset(spec, a.n, lo, hi, g.seed)) recs.push_back(to_record(s));
  const auto dir = std::filesystem::path(g.out).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  write_jsonl(g.out, recs);
  std::cout << "wrote " << recs.size() << " " << a.task << " records (ops " << lo << ".." << hi
            << ") to " << g.out << '\n';
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Globals& g) {
  if (g.config.empty()) throw ConfigError("train needs --config <experiment file>");
  auto c = ExperimentConfig::load(g.config);
  if (g.seed_set) c.train.seed = g.seed;
  if (!g.out.empty()) {
    c.checkpoint = (std::filesystem::path(g.out) / "model.ckpt").string();
    c.log = (std::filesystem::path(g.out) / "train.jsonl").string();
  }
  c.validate();
  if (!g.out.empty()) {
    std::filesystem::create_directories(g.out);
    std::ofstream(std::filesystem::path(g.out) / "config.txt") << c.to_text();
  }
  const auto r = run_experiment(c);
  std::cout << "mode " << c.train.mode << ": " << r.outcome.steps << " steps, final loss "
            << r.outcome.last_loss;
  if (r.outcome.eval_accuracy >= 0)
    std::cout << ", held-out accuracy " << r.outcome.eval_accuracy
              << (r.outcome.reached_target ? " (target reached)" : "");
  std::cout << "\ncheckpoint " << r.checkpoint << "\nlog " << c.log << '\n';
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string prefill = "sequential";
  std::string method;
  bool lazy = false;
  bool trace = false;
  bool freeze = false;
  std::size_t max_new = 0;
};

void check_compatible(const Vocabulary& vocab, const std::vector<Record>& recs) {
  for (std::size_t i = 0; i < recs.size(); ++i) {
    try {
      vocab.tokenize(recs[i].text);
      vocab.tokenize(recs[i].answer);
    } catch (const VocabularyError& e) {
      throw CompatibilityError("record " + std::to_string(i) +
                               " does not fit the checkpoint vocabulary: " + e.what());
    }
  }
}

EvalOptions eval_options(const Checkpoint& ck, const EvalArgs& a) {
  EvalOptions o;
  if (a.prefill != "sequential" && a.prefill != "speculative")
    throw ConfigError("--prefill must be sequential or speculative");
  o.speculative = a.prefill == "speculative";
  o.lazy = a.lazy;
  o.trace = a.trace;
  o.freeze_state = a.freeze;
  o.cot = ck.mode == "cot";
  o.max_new = a.max_new;
  return o;
}

int cmd_eval(const Globals& g, EvalArgs a) {
  KeyBinder b;
  b.bind("eval.prefill", a.prefill)
      .bind("eval.lazy", a.lazy)
      .bind("eval.trace", a.trace)
      .bind("eval.freeze_state", a.freeze)
      .bind("eval.max_new", a.max_new);
  b.apply(section_entries(g, "eval"));
  auto ck = load_checkpoint(a.checkpoint);
  const auto recs = read_jsonl(a.data);
  check_compatible(ck.vocab, recs);
  const auto opt = eval_options(ck, a);
  const auto s = evaluate(ck.model, ck.vocab, recs, opt);
  const std::string method = a.method.empty() ? ck.mode : a.method;
  const std::string task = recs.empty() ? "none" : recs.front().task;
  if (a.trace)
    for (std::size_t i = 0; i < s.predictions.size(); ++i)
      std::cout << "# sample " << i << " -> " << s.predictions[i].generated << '\n'
                << s.predictions[i].trace;
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "n_ops\tn\taccuracy\tmedian_ms\n";
  for (const auto& [ops, bk] : s.by_ops)
    std::cout << ops << '\t' << bk.n << '\t' << bk.accuracy() << '\t' << median(bk.ms) << '\n';
  std::cout << "all\t" << s.all.n << '\t' << s.all.accuracy() << '\t' << median(s.all.ms) << '\n';
  if (!g.out.empty()) {
    write_json_file(g.out, eval_fragment(method, task, s, ck.model.config(), opt, g.seed));
    std::cout << "fragment " << g.out << '\n';
  }
  return 0;
}

// ---- latency ----------------------------------------------------------------

struct LatencyArgs {
  std::string ts;
  std::string cot;
  std::string data;
  std::string prefill = "sequential";
  std::size_t warmup = 5;
  std::size_t min_queries = 100;
  double gate = -1;
};

int cmd_latency(const Globals& g, const LatencyArgs& a) {
  auto ts = load_checkpoint(a.ts);
  auto cot = load_checkpoint(a.cot);
  const auto recs = read_jsonl(a.data);
  check_compatible(ts.vocab, recs);
  check_compatible(cot.vocab, recs);
  if (recs.size() < a.warmup + a.min_queries)
    throw ContractError("latency needs at least " + std::to_string(a.warmup + a.min_queries) +
                        " queries, dataset has " + std::to_string(recs.size()));
  EvalArgs ea;
  ea.prefill = a.prefill;
  const auto ts_opt = eval_options(ts, ea);
  const auto cot_opt = eval_options(cot, ea);
  std::map<int, std::vector<double>> ts_ms, cot_ms;
  std::vector<double> ts_all, cot_all;
  std::size_t ts_ok = 0, cot_ok = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto p = predict(ts.model, ts.vocab, recs[i], ts_opt);
    const auto q = predict(cot.model, cot.vocab, recs[i], cot_opt);
    if (i < a.warmup) continue;
    ts_ok += p.correct, cot_ok += q.correct;
    ts_ms[recs[i].n_ops].push_back(p.ms);
    cot_ms[recs[i].n_ops].push_back(q.ms);
    ts_all.push_back(p.ms);
    cot_all.push_back(q.ms);
  }
  const double n = static_cast<double>(ts_all.size());
  if (a.gate >= 0 && (ts_ok / n < a.gate || cot_ok / n < a.gate))
    throw ContractError("accuracy gate failed: method " + std::to_string(ts_ok / n) + ", cot " +
                        std::to_string(cot_ok / n));
  std::vector<LatencyRow> rows;
  for (const auto& [ops, v] : ts_ms)
    rows.push_back({ops, v.size(), median(v), median(cot_ms[ops])});
  const LatencyRow overall{0, ts_all.size(), median(ts_all), median(cot_all)};
  std::cout << std::fixed << std::setprecision(3) << "n_ops\tn\tmethod_ms\tcot_ms\tspeedup\n";
  for (const auto& r : rows)
    std::cout << r.n_ops << '\t' << r.n << '\t' << r.method_ms << '\t' << r.cot_ms << '\t'
              << r.speedup() << '\n';
  std::cout << "all\t" << overall.n << '\t' << overall.method_ms << '\t' << overall.cot_ms << '\t'
            << overall.speedup() << '\n'
            << "accuracy: method " << ts_ok / n << ", cot " << cot_ok / n << '\n';
  if (!g.out.empty()) {
    write_json_file(g.out, latency_fragment(ts.mode, recs.front().task, rows, overall, g.seed));
    std::cout << "fragment " << g.out << '\n';
  }
  return 0;
}

// ---- cost -------------------------------------------------------------------

struct CostArgs {
  std::size_t tokens = 192;
  std::vector<std::size_t> ks = {2, 4, 8, 16};
  std::size_t reps = 5;
};

int cmd_cost(const Globals& g, const CostArgs& a) {
  ModelConfig cfg;
  if (!g.config.empty()) {
    KeyBinder b;
    cfg.bind(b, "model.");
    b.apply(section_entries(g, "model"));
  }
  std::vector<CostPoint> pts;
  std::cout << std::fixed << std::setprecision(3) << "mode\tK\tmedian_ms\n";
  for (const std::string mode : {"thinkstate", "bptt"})
    for (auto k : a.ks) {
      const double ms = median_step_ms<float>(cfg, mode, a.tokens, k, a.reps, g.seed);
      pts.push_back({mode, k, ms});
      std::cout << mode << '\t' << k << '\t' << ms << '\n';
    }
  if (!g.out.empty()) {
    write_json_file(g.out, cost_fragment(pts, a.tokens, g.seed));
    std::cout << "fragment " << g.out << '\n';
  }
  return 0;
}

// ---- report -----------------------------------------------------------------

int cmd_report(const Globals& g, const std::string& run_dir) {
  const auto r = collect_run(run_dir);
  const std::string out = g.out.empty() ? run_dir : g.out;
  write_report(r, out);
  std::cout << r.sources.size() << " fragments, " << r.accuracy.size() << " accuracy rows, "
            << r.cost.size() << " cost points -> " << out << '\n';
  for (const auto& s : r.skipped) std::cout << "skipped: " << s << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chunk-recurrent latent reasoning: data, training, evaluation and reports"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the verb
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "Key = value config file with [sections]");
  app.add_option("--out", g.out, "Output path (file or directory, per command)");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a JSONL dataset");
  gen_cmd->add_option("--task", gen.task, "parity or vars")->check(CLI::IsMember({"parity", "vars"}));
  gen_cmd->add_option("--n", gen.n, "Number of samples");
  gen_cmd->add_option("--n-max", gen.n_max, "Op-counts uniform on [1, n-max]");
  gen_cmd->add_option("--ood", gen.ood, "Op-counts uniform on [lo, hi] instead")->expected(2);
  gen_cmd->add_option("--n-vars", gen.n_vars, "Variables per program (vars)");
  gen_cmd->add_option("--modulus", gen.modulus, "Value modulus (vars)");

  auto* train_cmd = app.add_subcommand("train", "Train from an experiment config");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--prefill", ev.prefill, "sequential or speculative");
  eval_cmd->add_option("--method", ev.method, "Name used in reports (default: training mode)");
  eval_cmd->add_option("--max-new", ev.max_new, "Decode budget (default: from the record)");
  eval_cmd->add_flag("--lazy", ev.lazy, "Stop speculative rounds at the first non-trivial chunk");
  eval_cmd->add_flag("--trace", ev.trace, "Print per-chunk thoughts");
  eval_cmd->add_flag("--freeze-state-on-decode", ev.freeze, "Keep the prefill state while decoding");

  LatencyArgs lat;
  auto* lat_cmd = app.add_subcommand("latency", "Median end-to-end latency against a CoT checkpoint");
  lat_cmd->add_option("--ts", lat.ts, "Checkpoint under test")->required();
  lat_cmd->add_option("--cot", lat.cot, "CoT baseline checkpoint")->required();
  lat_cmd->add_option("--data", lat.data)->required();
  lat_cmd->add_option("--prefill", lat.prefill, "sequential or speculative");
  lat_cmd->add_option("--warmup", lat.warmup, "Leading queries excluded from timing");
  lat_cmd->add_option("--min-queries", lat.min_queries, "Minimum timed queries");
  lat_cmd->add_option("--gate", lat.gate, "Required accuracy for both checkpoints");

  CostArgs cost;
  auto* cost_cmd = app.add_subcommand("cost", "Training step time against chunk count");
  cost_cmd->add_option("--tokens", cost.tokens, "Tokens per sample (fixed across K)");
  cost_cmd->add_option("--ks", cost.ks, "Chunk counts")->delimiter(',');
  cost_cmd->add_option("--reps", cost.reps, "Timed steps per point");

  std::string run_dir;
  auto* rep_cmd = app.add_subcommand("report", "Aggregate run fragments into CSV, JSON and SVG");
  rep_cmd->add_option("--run", run_dir, "Directory of *.json fragments")->required();

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;
  try {
    if (*gen_cmd) return cmd_gen(g, gen);
    if (*train_cmd) return cmd_train(g);
    if (*eval_cmd) return cmd_eval(g, ev);
    if (*lat_cmd) return cmd_latency(g, lat);
    if (*cost_cmd) return cmd_cost(g, cost);
    if (*rep_cmd) return cmd_report(g, run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

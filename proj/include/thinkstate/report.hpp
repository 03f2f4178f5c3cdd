#pragma once

// Run reports: fragments written by eval / latency / cost runs, aggregated
// into a CSV table, a JSON document and SVG line charts.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "thinkstate/eval.hpp"

#ifndef THINKSTATE_GIT_REV
#define THINKSTATE_GIT_REV "unknown"
#endif

namespace thinkstate {

using Json = nlohmann::ordered_json;

inline std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("model name", 0) == 0) {
      auto colon = line.find(':');
      if (colon != std::string::npos) return trim(line.substr(colon + 1));
    }
  return "unknown";
}

inline Json provenance(std::uint64_t seed) {
  Json j;
  j["git"] = THINKSTATE_GIT_REV;
  j["seed"] = seed;
  j["cpu"] = cpu_model();
  j["hardware_threads"] = std::thread::hardware_concurrency();
  return j;
}

inline Json config_json(const ModelConfig& cfg) {
  Json j = Json::object();
  for (const auto& [k, v] : cfg.to_pairs()) j[k] = v;
  return j;
}

struct AccuracyRow {
  std::string method;
  std::string task;
  int n_ops = 0;
  std::size_t n = 0;
  double accuracy = 0;
  double median_ms = 0;
};

// Fragment written by `eval`: accuracy and median latency per op-count bucket,
// plus aggregate prefill statistics.
inline Json eval_fragment(const std::string& method, const std::string& task,
                          const EvalSummary& s, const ModelConfig& cfg, const EvalOptions& opt,
                          std::uint64_t seed) {
  Json j;
  j["kind"] = "eval";
  j["method"] = method;
  j["task"] = task;
  j["n"] = s.all.n;
  j["accuracy"] = s.all.accuracy();
  j["median_ms"] = median(s.all.ms);
  Json buckets = Json::array();
  for (const auto& [ops, b] : s.by_ops)
    buckets.push_back({{"n_ops", ops},
                       {"n", b.n},
                       {"accuracy", b.accuracy()},
                       {"median_ms", median(b.ms)}});
  j["buckets"] = buckets;
  double rounds = 0, nontrivial = 0, chunks = 0;
  for (const auto& p : s.predictions) {
    rounds += static_cast<double>(p.stats.rounds);
    nontrivial += static_cast<double>(p.nontrivial);
    chunks += static_cast<double>(p.chunks);
  }
  const double n = s.predictions.empty() ? 1.0 : static_cast<double>(s.predictions.size());
  j["prefill"] = {{"mode", opt.speculative ? (opt.lazy ? "speculative-lazy" : "speculative")
                                           : "sequential"},
                  {"mean_rounds", rounds / n},
                  {"mean_nontrivial", nontrivial / n},
                  {"mean_chunks", chunks / n}};
  j["config"] = config_json(cfg);
  j["provenance"] = provenance(seed);
  return j;
}

struct LatencyRow {
  int n_ops = 0;
  std::size_t n = 0;
  double method_ms = 0;
  double cot_ms = 0;
  double speedup() const { return method_ms > 0 ? cot_ms / method_ms : 0.0; }
};

inline Json latency_fragment(const std::string& method, const std::string& task,
                             const std::vector<LatencyRow>& rows, const LatencyRow& overall,
                             std::uint64_t seed) {
  Json j;
  j["kind"] = "latency";
  j["method"] = method;
  j["task"] = task;
  Json arr = Json::array();
  for (const auto& r : rows)
    arr.push_back({{"n_ops", r.n_ops},
                   {"n", r.n},
                   {"method_ms", r.method_ms},
                   {"cot_ms", r.cot_ms},
                   {"speedup", r.speedup()}});
  j["rows"] = arr;
  j["overall"] = {{"n", overall.n},
                  {"method_ms", overall.method_ms},
                  {"cot_ms", overall.cot_ms},
                  {"speedup", overall.speedup()}};
  j["provenance"] = provenance(seed);
  return j;
}

struct CostPoint {
  std::string mode;
  std::size_t k = 0;  // chunks per sample
  double median_ms = 0;
};

inline Json cost_fragment(const std::vector<CostPoint>& pts, std::size_t tokens,
                          std::uint64_t seed) {
  Json j;
  j["kind"] = "cost";
  j["tokens"] = tokens;
  Json arr = Json::array();
  for (const auto& p : pts) arr.push_back({{"mode", p.mode}, {"k", p.k}, {"median_ms", p.median_ms}});
  j["points"] = arr;
  j["provenance"] = provenance(seed);
  return j;
}

inline void write_json_file(const std::string& path, const Json& j) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

struct RunReport {
  std::vector<AccuracyRow> accuracy;
  std::vector<Json> latency;
  std::vector<CostPoint> cost;
  std::vector<Json> configs;
  std::vector<std::string> sources;
  std::vector<std::string> skipped;  // unreadable fragments, listed not fatal
};

// Reads every *.json fragment in the run directory.
inline RunReport collect_run(const std::string& dir) {
  RunReport r;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    r.skipped.push_back(dir + " (not a directory)");
    return r;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    if (f.filename() == "report.json") continue;
    try {
      std::ifstream in(f);
      const auto j = Json::parse(in);
      const auto kind = j.value("kind", std::string());
      if (kind == "eval") {
        for (const auto& b : j.at("buckets"))
          r.accuracy.push_back({j.at("method"), j.at("task"), b.at("n_ops"), b.at("n"),
                                b.at("accuracy"), b.at("median_ms")});
        if (j.contains("config")) r.configs.push_back(j.at("config"));
      } else if (kind == "latency") {
        r.latency.push_back(j);
      } else if (kind == "cost") {
        for (const auto& p : j.at("points"))
          r.cost.push_back({p.at("mode"), p.at("k"), p.at("median_ms")});
      } else {
        r.skipped.push_back(f.filename().string() + " (unknown kind)");
        continue;
      }
      r.sources.push_back(f.filename().string());
    } catch (const std::exception& e) {
      r.skipped.push_back(f.filename().string() + " (" + e.what() + ")");
    }
  }
  return r;
}

inline std::string accuracy_csv(const RunReport& r) {
  std::ostringstream os;
  os << "method,task,n_ops_bucket,accuracy,median_ms\n";
  for (const auto& a : r.accuracy)
    os << a.method << ',' << a.task << ',' << a.n_ops << ',' << a.accuracy << ',' << a.median_ms
       << '\n';
  return os.str();
}

inline Json report_json(const RunReport& r) {
  Json j;
  Json acc = Json::array();
  for (const auto& a : r.accuracy)
    acc.push_back({{"method", a.method},
                   {"task", a.task},
                   {"n_ops_bucket", a.n_ops},
                   {"n", a.n},
                   {"accuracy", a.accuracy},
                   {"median_ms", a.median_ms}});
  j["accuracy"] = acc;
  j["latency"] = r.latency;
  Json cost = Json::array();
  for (const auto& c : r.cost)
    cost.push_back({{"mode", c.mode}, {"k", c.k}, {"median_ms", c.median_ms}});
  j["cost"] = cost;
  j["configs"] = r.configs;
  j["sources"] = r.sources;
  j["skipped"] = r.skipped;
  return j;
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace detail

// Minimal SVG line chart: one polyline per series and a legend.
inline std::string line_chart_svg(const std::string& title, const std::string& xlabel,
                                  const std::string& ylabel, const std::vector<Series>& series) {
  const double W = 640, H = 400, L = 60, R = 160, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (first) {
        x0 = x1 = x;
        y0 = std::min(0.0, y);
        y1 = y;
        first = false;
      }
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
     << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "  <text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << detail::xml_escape(title) << "</text>\n"
     << "  <line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "  <line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    os << "  <text x=\"" << px(xv) << "\" y=\"" << H - B + 16
       << "\" text-anchor=\"middle\" font-size=\"11\">" << detail::fmt(xv) << "</text>\n"
       << "  <text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << detail::fmt(yv) << "</text>\n";
  }
  os << "  <text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::xml_escape(xlabel) << "</text>\n"
     << "  <text x=\"14\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
     << "transform=\"rotate(-90 14 " << (T + H - B) / 2 << ")\">" << detail::xml_escape(ylabel)
     << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % 8];
    auto pts = series[i].points;
    std::sort(pts.begin(), pts.end());
    os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k)
      os << (k ? " " : "") << px(pts[k].first) << ',' << py(pts[k].second);
    os << "\"/>\n";
    const double ly = T + 16 + 18.0 * static_cast<double>(i);
    os << "  <line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "  <text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
       << detail::xml_escape(series[i].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::vector<Series> accuracy_series(const RunReport& r) {
  std::map<std::string, Series> by;
  for (const auto& a : r.accuracy) {
    const auto key = a.method + " / " + a.task;
    by[key].name = key;
    by[key].points.emplace_back(a.n_ops, a.accuracy);
  }
  std::vector<Series> out;
  for (auto& [k, s] : by) out.push_back(std::move(s));
  return out;
}

inline std::vector<Series> cost_series(const RunReport& r) {
  std::map<std::string, Series> by;
  for (const auto& c : r.cost) {
    by[c.mode].name = c.mode;
    by[c.mode].points.emplace_back(static_cast<double>(c.k), c.median_ms);
  }
  std::vector<Series> out;
  for (auto& [k, s] : by) out.push_back(std::move(s));
  return out;
}

// Writes report.csv, report.json, accuracy.svg and step_time.svg into `out_dir`.
inline void write_report(const RunReport& r, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto base = std::filesystem::path(out_dir);
  {
    std::ofstream out(base / "report.csv");
    if (!out) throw IoError("cannot write report.csv in " + out_dir);
    out << accuracy_csv(r);
  }
  write_json_file((base / "report.json").string(), report_json(r));
  std::ofstream(base / "accuracy.svg")
      << line_chart_svg("Accuracy vs operations", "operations", "accuracy", accuracy_series(r));
  std::ofstream(base / "step_time.svg")
      << line_chart_svg("Training step time vs chunks", "chunks K", "median step ms",
                        cost_series(r));
}

}  // namespace thinkstate

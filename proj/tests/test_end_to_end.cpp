#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "thinkstate/eval.hpp"
#include "thinkstate/experiment.hpp"

using namespace thinkstate;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<Record> parity_records(std::size_t n, int n_max, std::uint64_t seed) {
  std::vector<Record> out;
  for (const auto& s : gen_dataset({"parity"}, n, 1, n_max, seed)) out.push_back(to_record(s));
  return out;
}

ExperimentConfig tiny(const fs::path& dir) {
  auto c = ExperimentConfig::load(THINKSTATE_SOURCE_DIR "/configs/parity-tiny.ini");
  write_jsonl((dir / "train.jsonl").string(), parity_records(5000, 5, 1));
  write_jsonl((dir / "heldout.jsonl").string(), parity_records(200, 5, 2));
  c.train_data = (dir / "train.jsonl").string();
  c.heldout_data = (dir / "heldout.jsonl").string();
  c.checkpoint = (dir / "model.ckpt").string();
  c.log = (dir / "train.jsonl.log").string();
  return c;
}

}  // namespace

TEST(EndToEnd, TinyParityModelReachesHeldOutTarget) {
  const auto dir = scratch("ts_e2e_thinkstate");
  const auto c = tiny(dir);
  const auto r = run_experiment(c);
  const auto ck = load_checkpoint(r.checkpoint);
  EXPECT_EQ(ck.mode, "thinkstate");
  const auto fresh = parity_records(300, 5, 3);
  const auto first = evaluate(ck.model, ck.vocab, fresh, EvalOptions{});
  EXPECT_GE(first.all.accuracy(), 0.99) << "after " << r.outcome.steps << " steps";

  // Reloading reproduces the evaluation exactly.
  const auto again = load_checkpoint(r.checkpoint);
  EXPECT_EQ(evaluate(again.model, again.vocab, fresh, EvalOptions{}).all.accuracy(),
            first.all.accuracy());
  std::ifstream log(c.log);
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  EXPECT_NE(line.find("\"step\":1"), std::string::npos) << line;
}

TEST(EndToEnd, NoCotCheckpointHasNoThinkingParameters) {
  const auto dir = scratch("ts_e2e_nocot");
  auto c = tiny(dir);
  c.train.mode = "nocot";
  c.train.steps = 5;
  c.train.eval_every = 0;
  run_experiment(c);
  std::ifstream in(c.checkpoint, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(bytes.find("think."), std::string::npos);
  EXPECT_EQ(bytes.find("comp."), std::string::npos);
  const auto ck = load_checkpoint(c.checkpoint);
  EXPECT_FALSE(ck.model.has_thinking);
  EXPECT_EQ(ck.mode, "nocot");
}

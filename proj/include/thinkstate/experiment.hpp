#pragma once

// Experiment files: sectioned key = value text holding the model, training
// and data settings of one training run.
//
//   [model]   d_model, n_layers, ... (ModelConfig)
//   [train]   mode, lr, steps, ...   (TrainConfig)
//   [data]    train, heldout         (JSONL paths)
//   [output]  checkpoint, log

#include <filesystem>
#include <fstream>
#include <string>

#include "thinkstate/checkpoint.hpp"
#include "thinkstate/training.hpp"

namespace thinkstate {

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_data;
  std::string heldout_data;
  std::string checkpoint = "model.ckpt";
  std::string log = "train.jsonl";

  static ExperimentConfig from_entries(const std::vector<KeyValueEntry>& entries) {
    ExperimentConfig c;
    KeyBinder b;
    c.model.bind(b, "model.");
    c.train.bind(b, "train.");
    b.bind("data.train", c.train_data)
        .bind("data.heldout", c.heldout_data)
        .bind("output.checkpoint", c.checkpoint)
        .bind("output.log", c.log);
    b.apply(entries);
    bool vocab_given = false;
    for (const auto& e : entries) vocab_given = vocab_given || e.key == "model.vocab_size";
    const auto task_vocab = Vocabulary::task_vocabulary().size();
    if (vocab_given && c.model.vocab_size != task_vocab)
      throw ConfigError("model.vocab_size must equal the task vocabulary size (" +
                        std::to_string(task_vocab) + ") or be omitted");
    c.model.vocab_size = task_vocab;
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    try {
      return from_entries(read_key_value_file(path));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  void validate() const {
    model.validate();
    train.validate();
    if (train_data.empty()) throw ConfigError("data.train is required");
  }

  // Echo of every setting, as the same sectioned text.
  std::string to_text() const {
    std::ostringstream os;
    os << "[model]\n";
    for (const auto& [k, v] : model.to_pairs()) os << k << " = " << v << '\n';
    os << "\n[train]\n"
       << "mode = " << train.mode << "\nlr = " << train.lr << "\nbeta1 = " << train.beta1
       << "\nbeta2 = " << train.beta2 << "\neps = " << train.eps << "\nclip = " << train.clip
       << "\nwarmup = " << train.warmup << "\nbatch_size = " << train.batch_size
       << "\nsteps = " << train.steps << "\nseed = " << train.seed
       << "\nfull_span_loss = " << (train.full_span_loss ? "true" : "false")
       << "\nalign = " << (train.align ? "true" : "false") << "\nlog_every = " << train.log_every
       << "\neval_every = " << train.eval_every << "\neval_samples = " << train.eval_samples
       << "\ntarget_accuracy = " << train.target_accuracy << "\n\n[data]\ntrain = " << train_data
       << "\nheldout = " << heldout_data << "\n\n[output]\ncheckpoint = " << checkpoint
       << "\nlog = " << log << '\n';
    return os.str();
  }
};

struct ExperimentResult {
  TrainOutcome outcome;
  std::string checkpoint;
};

// Trains from the configured JSONL files and writes checkpoint and log.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  c.validate();
  const auto vocab = Vocabulary::task_vocabulary();
  const auto data = read_jsonl(c.train_data);
  std::vector<Record> heldout;
  if (!c.heldout_data.empty()) heldout = read_jsonl(c.heldout_data);
  for (const auto& path : {c.checkpoint, c.log}) {
    const auto dir = std::filesystem::path(path).parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
  }
  std::ofstream log(c.log);
  if (!log) throw IoError("cannot write training log " + c.log);
  ThinkStateModel<float> m(c.model, c.train.seed, c.train.thinking());
  ExperimentResult r;
  r.outcome = train(m, vocab, data, c.train, &log, heldout.empty() ? nullptr : &heldout);
  save_checkpoint(c.checkpoint, m, vocab, c.train.mode);
  r.checkpoint = c.checkpoint;
  return r;
}

}  // namespace thinkstate

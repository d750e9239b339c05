#pragma once

#include <string>
#include <vector>

#include "mat/model.hpp"
#include "mat/tasks.hpp"
#include "mat/train.hpp"

namespace mat {

// Merged configuration for a run: model + training + task + paths. Parsed
// from a flat key=value file with '#' comments; every key must be known.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskSpec task;
  std::string run_dir = "run";
  std::string data_file;  // optional pre-generated data cache for eval
  std::string base_ckpt;  // optional warm-start checkpoint for train

  void validate() const {
    model.validate();
    train.validate();
    task.validate();
    if (task.vocab != model.vocab_src || task.vocab != model.vocab_tgt) {
      throw ConfigError("config: task vocab " + std::to_string(task.vocab) +
                        " must equal the model vocab");
    }
    if (task.len_max > model.max_len - 2) {
      throw ConfigError("config: len_max " + std::to_string(task.len_max) +
                        " leaves no room for bos/eos within max_len " +
                        std::to_string(model.max_len));
    }
  }
};

// Applies `key=value`; throws ConfigError on unknown keys or bad values.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// File parse then overrides, in order. Override strings look like "rho=0.2".
RunConfig parse_run_config(const std::string& path, const std::vector<std::string>& overrides);
RunConfig run_config_from_entries(const std::vector<std::string>& overrides);

// Canonical dump of every key, suitable for effective-config.txt.
std::string dump_run_config(const RunConfig& cfg);

// MAT_SEED, when set, overrides the configured seed.
void apply_env_seed(RunConfig& cfg);

}  // namespace mat

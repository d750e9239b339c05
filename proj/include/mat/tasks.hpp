#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mat/error.hpp"
#include "mat/rng.hpp"
#include "mat/vocab.hpp"

// Synthetic sequence tasks and batching for desk-scale training runs.
namespace mat {

enum class TaskKind { kCopy, kReverse, kSortDigits };

std::string task_kind_name(TaskKind k);
TaskKind parse_task_kind(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::kReverse;
  int vocab = 16;  // includes the four reserved ids
  int len_min = 4;
  int len_max = 12;
  int n_train = 20000;
  int n_valid = 1000;
  int n_test = 1000;
  uint64_t seed = 1;

  void validate() const;
};

struct Example {
  std::vector<int> src, tgt;
};

struct TaskData {
  std::vector<Example> train, valid, test;
};

// Deterministic from the seed; source sequences are sampled without
// repetition, so the three splits are disjoint.
TaskData generate_task(const TaskSpec& spec);

// Task cache file: one example per line, "src_ids<TAB>tgt_ids" with
// space-separated decimal ids.
void write_examples_tsv(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> read_examples_tsv(const std::string& path);

// One padded training batch. Row i of each matrix belongs to example i; pad
// positions are excluded from the loss and from accuracy counts.
struct Batch {
  std::vector<std::vector<int>> src;      // source ids + eos, padded
  std::vector<std::vector<int>> tgt_in;   // bos + target ids, padded
  std::vector<std::vector<int>> tgt_out;  // target ids + eos, padded
  std::vector<std::vector<uint8_t>> src_mask;  // 1 = real token
  std::vector<std::vector<uint8_t>> tgt_mask;

  int size() const { return static_cast<int>(src.size()); }
  std::vector<int> src_row(int i) const;     // trimmed to real tokens
  std::vector<int> tgt_in_row(int i) const;
  std::vector<int> tgt_out_row(int i) const;
};

// Shuffles the epoch deterministically from (seed, epoch) and packs examples
// greedily until the token budget is reached.
std::vector<Batch> make_epoch_batches(const std::vector<Example>& examples, int batch_tokens,
                                      uint64_t seed, int64_t epoch);

}  // namespace mat

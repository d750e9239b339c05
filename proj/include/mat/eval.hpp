#pragma once

#include <string>
#include <vector>

#include "mat/metrics.hpp"
#include "mat/model.hpp"
#include "mat/tasks.hpp"

namespace mat {

struct EvalReport {
  double bleu4 = 0.0;
  double token_accuracy = 0.0;
  double exact_sequence_accuracy = 0.0;
  double mean_loss = 0.0;  // plain cross entropy, no smoothing
  int64_t sample_count = 0;
};

// key=value block, one field per line
std::string format_report_block(const EvalReport& r);
// header + row, ready to append to a csv
std::string eval_csv_header();
std::string format_report_csv(const EvalReport& r);

// Argmax decoding until eos or the length cap, pads never emitted; argmax
// ties resolve to the lowest token id. Returns payload ids without bos/eos.
std::vector<int> greedy_decode(const Model<float>& m, const std::vector<int>& src, int max_len);

// Teacher-forced loss/accuracy plus greedy-decode BLEU over a data split.
// Runs the model in eval mode, so the stored drop rate and any rng seed are
// irrelevant to the result.
EvalReport evaluate(const Model<float>& m, const std::vector<Example>& examples);

}  // namespace mat

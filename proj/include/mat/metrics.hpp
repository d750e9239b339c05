#pragma once

#include <string>
#include <vector>

#include "mat/tensor.hpp"
#include "mat/vocab.hpp"

namespace mat {

struct BleuResult {
  double score = 0.0;          // in [0, 1]
  double precisions[4] = {0, 0, 0, 0};  // modified n-gram precisions, n = 1..4
  double brevity_penalty = 0.0;
  int64_t candidate_len = 0;
  int64_t reference_len = 0;
};

// Corpus-level BLEU-4: geometric mean of clipped 1..4-gram precisions times
// the brevity penalty. Unsmoothed, one reference per candidate.
BleuResult bleu4(const std::vector<std::vector<int>>& candidates,
                 const std::vector<std::vector<int>>& references);

inline double bleu4_score(const std::vector<std::vector<int>>& candidates,
                          const std::vector<std::vector<int>>& references) {
  return bleu4(candidates, references).score;
}

// (argmax hits, non-pad positions) for a logits block.
template <typename T>
std::pair<int64_t, int64_t> token_match_counts(const Tensor<T>& logits,
                                               const std::vector<int>& targets, int pad_id) {
  if (logits.ndim() != 2 || static_cast<size_t>(logits.rows()) != targets.size()) {
    throw DimensionError("token_accuracy: logits " + shape_str(logits.shape) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const int64_t v = logits.cols();
  int64_t real = 0, hit = 0;
  for (size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == pad_id) continue;
    ++real;
    const T* row = logits.data.data() + static_cast<int64_t>(r) * v;
    int best = 0;
    for (int64_t c = 1; c < v; ++c) {
      if (row[c] > row[best]) best = static_cast<int>(c);
    }
    if (best == targets[r]) ++hit;
  }
  return {hit, real};
}

// Fraction of non-pad positions where the argmax of the logits row matches
// the target id.
template <typename T>
double token_accuracy(const Tensor<T>& logits, const std::vector<int>& targets, int pad_id) {
  const auto [hit, real] = token_match_counts(logits, targets, pad_id);
  if (real == 0) throw ContractError("token_accuracy: every position is padding");
  return static_cast<double>(hit) / static_cast<double>(real);
}

}  // namespace mat

#include "mat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mat/error.hpp"

namespace mat {

namespace {

using Ngram = std::vector<int>;

void count_ngrams(const std::vector<int>& seq, int n, std::map<Ngram, int64_t>& counts) {
  if (static_cast<int>(seq.size()) < n) return;
  for (size_t i = 0; i + n <= seq.size(); ++i) {
    counts[Ngram(seq.begin() + static_cast<long>(i), seq.begin() + static_cast<long>(i + n))] += 1;
  }
}

}  // namespace

BleuResult bleu4(const std::vector<std::vector<int>>& candidates,
                 const std::vector<std::vector<int>>& references) {
  if (candidates.empty()) throw ContractError("bleu4: empty candidate list");
  if (candidates.size() != references.size()) {
    throw ContractError("bleu4: " + std::to_string(candidates.size()) + " candidates vs " +
                        std::to_string(references.size()) + " references");
  }

  BleuResult out;
  int64_t matches[4] = {0, 0, 0, 0};
  int64_t totals[4] = {0, 0, 0, 0};
  for (size_t i = 0; i < candidates.size(); ++i) {
    out.candidate_len += static_cast<int64_t>(candidates[i].size());
    out.reference_len += static_cast<int64_t>(references[i].size());
    for (int n = 1; n <= 4; ++n) {
      std::map<Ngram, int64_t> cand_counts, ref_counts;
      count_ngrams(candidates[i], n, cand_counts);
      count_ngrams(references[i], n, ref_counts);
      for (const auto& [gram, count] : cand_counts) {
        totals[n - 1] += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }

  for (int n = 0; n < 4; ++n) {
    out.precisions[n] =
        totals[n] > 0 ? static_cast<double>(matches[n]) / static_cast<double>(totals[n]) : 0.0;
  }
  out.brevity_penalty =
      out.candidate_len >= out.reference_len || out.candidate_len == 0
          ? (out.candidate_len == 0 ? 0.0 : 1.0)
          : std::exp(1.0 - static_cast<double>(out.reference_len) /
                               static_cast<double>(out.candidate_len));

  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (out.precisions[n] <= 0.0) {
      out.score = 0.0;
      return out;
    }
    log_sum += 0.25 * std::log(out.precisions[n]);
  }
  out.score = out.brevity_penalty * std::exp(log_sum);
  return out;
}

}  // namespace mat

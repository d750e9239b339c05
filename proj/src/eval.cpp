#include "mat/eval.hpp"

#include <cstdio>
#include <sstream>

#include "mat/train.hpp"

namespace mat {

namespace {

std::string format_fixed(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string format_report_block(const EvalReport& r) {
  std::ostringstream os;
  os << "bleu4=" << format_fixed(r.bleu4) << "\n";
  os << "token_accuracy=" << format_fixed(r.token_accuracy) << "\n";
  os << "exact_sequence_accuracy=" << format_fixed(r.exact_sequence_accuracy) << "\n";
  os << "mean_loss=" << format_fixed(r.mean_loss) << "\n";
  os << "sample_count=" << r.sample_count << "\n";
  return os.str();
}

std::string eval_csv_header() { return "bleu4,token_accuracy,exact_sequence_accuracy,mean_loss,sample_count"; }

std::string format_report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << format_fixed(r.bleu4) << "," << format_fixed(r.token_accuracy) << ","
     << format_fixed(r.exact_sequence_accuracy) << "," << format_fixed(r.mean_loss) << ","
     << r.sample_count;
  return os.str();
}

std::vector<int> greedy_decode(const Model<float>& m, const std::vector<int>& src, int max_len) {
  std::vector<int> enc_in = src;
  enc_in.push_back(kEosId);
  const int cap = std::min(max_len, m.cfg.max_len - 1);
  std::vector<int> tgt_in(1, kBosId);
  std::vector<int> out;
  while (static_cast<int>(out.size()) < cap) {
    Tensor<float> logits = forward(m, enc_in, tgt_in);
    const int v = logits.cols();
    const float* row = logits.data.data() + static_cast<int64_t>(logits.rows() - 1) * v;
    int best = -1;
    for (int c = 0; c < v; ++c) {
      if (c == kPadId) continue;
      if (best < 0 || row[c] > row[best]) best = c;  // strict > keeps the lowest id on ties
    }
    if (best == kEosId) break;
    out.push_back(best);
    tgt_in.push_back(best);
  }
  return out;
}

EvalReport evaluate(const Model<float>& m, const std::vector<Example>& examples) {
  if (examples.empty()) throw ContractError("evaluate: empty example list");
  EvalReport r;
  r.sample_count = static_cast<int64_t>(examples.size());

  double loss_sum = 0.0;
  int64_t token_hits = 0, token_total = 0, exact = 0;
  std::vector<std::vector<int>> candidates, references;
  candidates.reserve(examples.size());
  references.reserve(examples.size());

  for (const auto& ex : examples) {
    std::vector<int> enc_in = ex.src;
    enc_in.push_back(kEosId);
    std::vector<int> tgt_in(1, kBosId);
    tgt_in.insert(tgt_in.end(), ex.tgt.begin(), ex.tgt.end());
    std::vector<int> tgt_out = ex.tgt;
    tgt_out.push_back(kEosId);

    Tensor<float> logits = forward(m, enc_in, tgt_in);
    loss_sum +=
        static_cast<double>(label_smoothed_nll<float>(logits, tgt_out, 0.0, kPadId).data[0]) *
        static_cast<double>(tgt_out.size());
    const auto [hits, real] = token_match_counts(logits, tgt_out, kPadId);
    token_hits += hits;
    token_total += real;

    std::vector<int> decoded = greedy_decode(m, ex.src, m.cfg.max_len);
    if (decoded == ex.tgt) ++exact;
    candidates.push_back(std::move(decoded));
    references.push_back(ex.tgt);
  }

  r.mean_loss = loss_sum / static_cast<double>(token_total);
  r.token_accuracy = static_cast<double>(token_hits) / static_cast<double>(token_total);
  r.exact_sequence_accuracy = static_cast<double>(exact) / static_cast<double>(examples.size());
  r.bleu4 = bleu4_score(candidates, references);
  return r;
}

}  // namespace mat

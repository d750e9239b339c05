#include <algorithm>
#include <fstream>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "mat/eval.hpp"
#include "mat/metrics.hpp"
#include "mat/tasks.hpp"
#include "test_util.hpp"

using namespace mat;
namespace fs = std::filesystem;

namespace {

TaskSpec small_spec(TaskKind kind) {
  TaskSpec spec;
  spec.kind = kind;
  spec.vocab = 12;
  spec.len_min = 2;
  spec.len_max = 6;
  spec.n_train = 300;
  spec.n_valid = 40;
  spec.n_test = 40;
  spec.seed = 5;
  return spec;
}

bool same_examples(const std::vector<Example>& a, const std::vector<Example>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].src != b[i].src || a[i].tgt != b[i].tgt) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("task targets follow their rule") {
  for (TaskKind kind : {TaskKind::kCopy, TaskKind::kReverse, TaskKind::kSortDigits}) {
    auto data = generate_task(small_spec(kind));
    for (const auto& ex : data.train) {
      std::vector<int> expect = ex.src;
      if (kind == TaskKind::kReverse) std::reverse(expect.begin(), expect.end());
      if (kind == TaskKind::kSortDigits) std::sort(expect.begin(), expect.end());
      CHECK(ex.tgt == expect);
      for (int id : ex.src) {
        CHECK(id >= kNumSpecialTokens);
        CHECK(id < 12);
      }
    }
  }
}

TEST_CASE("task generation is seed-stable with disjoint splits") {
  auto spec = small_spec(TaskKind::kReverse);
  auto a = generate_task(spec);
  auto b = generate_task(spec);
  CHECK(same_examples(a.train, b.train));
  CHECK(same_examples(a.valid, b.valid));
  CHECK(same_examples(a.test, b.test));

  spec.seed = 6;
  CHECK(!same_examples(generate_task(spec).train, a.train));

  std::set<std::vector<int>> seen;
  for (const auto* split : {&a.train, &a.valid, &a.test}) {
    for (const auto& ex : *split) CHECK(seen.insert(ex.src).second);
  }
}

TEST_CASE("infeasible task specs are rejected up front") {
  TaskSpec spec = small_spec(TaskKind::kCopy);
  spec.vocab = 5;  // one payload symbol
  spec.len_min = 1;
  spec.len_max = 3;
  spec.n_train = 100;  // only 3 distinct sources exist
  CHECK_THROWS_AS(generate_task(spec), ConfigError);

  TaskSpec bad = spec;
  bad.vocab = 3;
  CHECK_THROWS_AS(generate_task(bad), ConfigError);
}

TEST_CASE("task cache files round-trip and reject junk") {
  auto data = generate_task(small_spec(TaskKind::kSortDigits));
  const std::string path = (fs::temp_directory_path() / "mat_task_cache.tsv").string();
  write_examples_tsv(path, data.test);
  CHECK(same_examples(read_examples_tsv(path), data.test));

  std::ofstream os(path, std::ios::trunc);
  os << "4 5 6\n";  // missing tab
  os.close();
  CHECK_THROWS_AS(read_examples_tsv(path), InputError);
  fs::remove(path);
}

TEST_CASE("epoch batches cover every example once and respect padding") {
  auto data = generate_task(small_spec(TaskKind::kCopy));
  auto batches = make_epoch_batches(data.train, 32, 9, 0);
  auto again = make_epoch_batches(data.train, 32, 9, 0);
  CHECK(batches.size() == again.size());

  std::multiset<std::vector<int>> seen;
  for (size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch& b = batches[bi];
    CHECK(b.size() == again[bi].size());
    for (int i = 0; i < b.size(); ++i) {
      CHECK(b.src_row(i) == again[bi].src_row(i));
      const auto src = b.src_row(i);
      const auto tgt_in = b.tgt_in_row(i);
      const auto tgt_out = b.tgt_out_row(i);
      CHECK(src.back() == kEosId);
      CHECK(tgt_in.front() == kBosId);
      CHECK(tgt_out.back() == kEosId);
      CHECK(tgt_in.size() == tgt_out.size());
      std::vector<int> payload(src.begin(), src.end() - 1);
      seen.insert(payload);
      // padded tails really are pad
      for (size_t j = src.size(); j < b.src[static_cast<size_t>(i)].size(); ++j) {
        CHECK(b.src[static_cast<size_t>(i)][j] == kPadId);
        CHECK(b.src_mask[static_cast<size_t>(i)][j] == 0);
      }
    }
  }
  std::multiset<std::vector<int>> expect;
  for (const auto& ex : data.train) expect.insert(ex.src);
  CHECK(seen == expect);

  // a different epoch reshuffles
  auto other = make_epoch_batches(data.train, 32, 9, 1);
  bool any_diff = other.size() != batches.size();
  for (size_t bi = 0; !any_diff && bi < batches.size(); ++bi) {
    any_diff = batches[bi].size() != other[bi].size() ||
               batches[bi].src_row(0) != other[bi].src_row(0);
  }
  CHECK(any_diff);
}

TEST_CASE("bleu4: identity, the classic clipping example, no-overlap zero") {
  std::vector<std::vector<int>> refs = {{4, 5, 6, 7}, {8, 9, 10, 4, 5}};
  CHECK(bleu4_score(refs, refs) == doctest::Approx(1.0).epsilon(1e-12));

  // "the the the the the the the" vs "the cat is on the mat"
  std::vector<std::vector<int>> cand = {{4, 4, 4, 4, 4, 4, 4}};
  std::vector<std::vector<int>> ref = {{4, 5, 6, 7, 4, 8}};
  auto res = bleu4(cand, ref);
  CHECK(res.precisions[0] == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
  CHECK(res.score == 0.0);  // no bigram overlap, unsmoothed

  // candidate without any common 4-gram scores zero
  std::vector<std::vector<int>> c2 = {{4, 5, 6, 9}};
  std::vector<std::vector<int>> r2 = {{4, 5, 6, 7}};
  CHECK(bleu4_score(c2, r2) == 0.0);

  CHECK_THROWS_AS(bleu4({}, {}), ContractError);
  CHECK_THROWS_AS(bleu4(cand, {}), ContractError);
}

TEST_CASE("bleu4 is invariant under pair order and never helped by truncation") {
  RngStream rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<int>> cands, refs;
    const int n = 4 + static_cast<int>(rng.next_below(4));
    for (int i = 0; i < n; ++i) {
      std::vector<int> r, c;
      const int len = 5 + static_cast<int>(rng.next_below(6));
      for (int j = 0; j < len; ++j) r.push_back(4 + static_cast<int>(rng.next_below(6)));
      c = r;
      for (auto& id : c) {
        if (rng.next_uniform() < 0.25) id = 4 + static_cast<int>(rng.next_below(6));
      }
      cands.push_back(c);
      refs.push_back(r);
    }
    const double base = bleu4_score(cands, refs);

    std::vector<size_t> order(cands.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
    std::vector<std::vector<int>> pc, pr;
    for (size_t i : order) {
      pc.push_back(cands[i]);
      pr.push_back(refs[i]);
    }
    CHECK(bleu4_score(pc, pr) == doctest::Approx(base).epsilon(1e-12));

    auto truncated = cands;
    for (auto& c : truncated) {
      if (c.size() > 1) c.pop_back();
    }
    CHECK(bleu4_score(truncated, refs) <= base + 1e-12);
  }
}

TEST_CASE("token accuracy counts argmax hits over non-pad positions") {
  Tensor<float> logits = Tensor<float>::zeros({4, 6});
  logits.at(0, 4) = 5;  // hit
  logits.at(1, 2) = 5;  // miss (target 5)
  logits.at(2, 5) = 5;  // hit
  logits.at(3, 1) = 5;  // pad position, ignored
  CHECK(token_accuracy(logits, {4, 5, 5, kPadId}, kPadId) == doctest::Approx(2.0 / 3.0));

  Tensor<float> hot = Tensor<float>::zeros({2, 6});
  hot.at(0, 3) = 1;
  hot.at(1, 2) = 1;
  CHECK(token_accuracy(hot, {3, 2}, kPadId) == 1.0);
  CHECK(token_accuracy(hot, {2, 3}, kPadId) == 0.0);
  CHECK_THROWS_AS(token_accuracy(hot, {kPadId, kPadId}, kPadId), ContractError);
}

TEST_CASE("greedy decode is deterministic, bounded, pad-free") {
  ModelConfig cfg;
  cfg.n_a = 1;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.ffn_dim = 16;
  cfg.enc_blocks = 1;
  cfg.dec_blocks = 1;
  cfg.vocab_src = cfg.vocab_tgt = 12;
  cfg.max_len = 10;
  auto model = build_model<float>(cfg, 3);

  const std::vector<int> src = {4, 7, 5};
  auto once = greedy_decode(model, src, 12);
  auto twice = greedy_decode(model, src, 12);
  CHECK(once == twice);
  CHECK(once.size() <= 9);  // model max_len caps the roll-out
  for (int id : once) CHECK(id != kPadId);
}

TEST_CASE("evaluate produces a bounded, well-formed report") {
  ModelConfig cfg;
  cfg.n_a = 2;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.ffn_dim = 16;
  cfg.enc_blocks = 1;
  cfg.dec_blocks = 1;
  cfg.vocab_src = cfg.vocab_tgt = 12;
  cfg.max_len = 12;
  auto model = build_model<float>(cfg, 3);

  auto spec = small_spec(TaskKind::kCopy);
  spec.n_train = 50;
  spec.n_valid = 5;
  spec.n_test = 10;
  auto data = generate_task(spec);

  auto report = evaluate(model, data.test);
  CHECK(report.sample_count == 10);
  CHECK(report.bleu4 >= 0.0);
  CHECK(report.bleu4 <= 1.0);
  CHECK(report.token_accuracy >= 0.0);
  CHECK(report.token_accuracy <= 1.0);
  CHECK(report.exact_sequence_accuracy >= 0.0);
  CHECK(report.exact_sequence_accuracy <= 1.0);
  CHECK(report.mean_loss > 0.0);

  const std::string block = format_report_block(report);
  CHECK(block.find("bleu4=") != std::string::npos);
  CHECK(block.find("sample_count=10") != std::string::npos);
  CHECK(format_report_csv(report).find(',') != std::string::npos);

  // identical across calls
  CHECK(format_report_block(evaluate(model, data.test)) == block);
}

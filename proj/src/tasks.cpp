#include "mat/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace mat {

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::kCopy:
      return "copy";
    case TaskKind::kReverse:
      return "reverse";
    case TaskKind::kSortDigits:
      return "sort_digits";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "reverse") return TaskKind::kReverse;
  if (name == "sort_digits") return TaskKind::kSortDigits;
  throw ConfigError("task: unknown kind '" + name + "' (expected copy|reverse|sort_digits)");
}

void TaskSpec::validate() const {
  std::string problems;
  auto fail = [&](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  if (vocab < kNumSpecialTokens + 1) {
    fail("vocab must be > " + std::to_string(kNumSpecialTokens) + " (four ids are reserved)");
  }
  if (len_min < 1) fail("len_min must be >= 1");
  if (len_max < len_min) fail("len_max must be >= len_min");
  if (n_train < 1 || n_valid < 0 || n_test < 0) fail("sample counts must be sensible");
  if (!problems.empty()) throw ConfigError("task spec: " + problems);
}

namespace {

std::vector<int> target_for(TaskKind kind, const std::vector<int>& src) {
  std::vector<int> tgt = src;
  switch (kind) {
    case TaskKind::kCopy:
      break;
    case TaskKind::kReverse:
      std::reverse(tgt.begin(), tgt.end());
      break;
    case TaskKind::kSortDigits:
      std::sort(tgt.begin(), tgt.end());
      break;
  }
  return tgt;
}

std::string key_of(const std::vector<int>& ids) {
  std::string k;
  for (int id : ids) {
    k += std::to_string(id);
    k += ',';
  }
  return k;
}

// Number of distinct sources, saturated at `cap`.
double distinct_sources(int payload, int len_min, int len_max, double cap) {
  double total = 0.0;
  for (int len = len_min; len <= len_max; ++len) {
    double seqs = 1.0;
    for (int i = 0; i < len; ++i) {
      seqs *= payload;
      if (seqs > cap) return cap;
    }
    total += seqs;
    if (total > cap) return cap;
  }
  return total;
}

}  // namespace

TaskData generate_task(const TaskSpec& spec) {
  spec.validate();
  const int payload = spec.vocab - kNumSpecialTokens;
  const int64_t total = static_cast<int64_t>(spec.n_train) + spec.n_valid + spec.n_test;
  if (distinct_sources(payload, spec.len_min, spec.len_max, 2.0 * static_cast<double>(total)) <
      static_cast<double>(total)) {
    throw ConfigError("task spec: fewer than " + std::to_string(total) +
                      " distinct sequences exist for vocab " + std::to_string(spec.vocab) +
                      ", lengths [" + std::to_string(spec.len_min) + "," +
                      std::to_string(spec.len_max) + "]");
  }

  RngStream rng(spec.seed);
  std::unordered_set<std::string> seen;
  std::vector<Example> all;
  all.reserve(static_cast<size_t>(total));
  int64_t attempts = 0;
  const int64_t max_attempts = 200 * total + 1000;
  while (static_cast<int64_t>(all.size()) < total) {
    if (++attempts > max_attempts) {
      throw ConfigError("task spec: could not sample " + std::to_string(total) +
                        " distinct sequences");
    }
    const int len = spec.len_min +
                    static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.len_max - spec.len_min + 1)));
    std::vector<int> src(static_cast<size_t>(len));
    for (auto& id : src) {
      id = kNumSpecialTokens + static_cast<int>(rng.next_below(static_cast<uint64_t>(payload)));
    }
    if (!seen.insert(key_of(src)).second) continue;
    all.push_back(Example{std::move(src), {}});
  }
  for (auto& ex : all) ex.tgt = target_for(spec.kind, ex.src);

  TaskData data;
  data.train.assign(all.begin(), all.begin() + spec.n_train);
  data.valid.assign(all.begin() + spec.n_train, all.begin() + spec.n_train + spec.n_valid);
  data.test.assign(all.begin() + spec.n_train + spec.n_valid, all.end());
  return data;
}

void write_examples_tsv(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("task cache: cannot open '" + path + "' for writing");
  for (const auto& ex : examples) {
    for (size_t i = 0; i < ex.src.size(); ++i) os << (i ? " " : "") << ex.src[i];
    os << '\t';
    for (size_t i = 0; i < ex.tgt.size(); ++i) os << (i ? " " : "") << ex.tgt[i];
    os << '\n';
  }
  if (!os) throw IoError("task cache: write to '" + path + "' failed");
}

std::vector<Example> read_examples_tsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("task cache: cannot open '" + path + "'");
  std::vector<Example> out;
  std::string line;
  int line_no = 0;
  auto parse_ids = [&](const std::string& field) {
    std::vector<int> ids;
    std::istringstream fs(field);
    std::string tok;
    while (fs >> tok) {
      try {
        ids.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw InputError("task cache: bad id '" + tok + "' on line " + std::to_string(line_no));
      }
      if (ids.back() < 0) {
        throw InputError("task cache: negative id on line " + std::to_string(line_no));
      }
    }
    return ids;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InputError("task cache: missing tab separator on line " + std::to_string(line_no));
    }
    Example ex;
    ex.src = parse_ids(line.substr(0, tab));
    ex.tgt = parse_ids(line.substr(tab + 1));
    if (ex.src.empty() || ex.tgt.empty()) {
      throw InputError("task cache: empty sequence on line " + std::to_string(line_no));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<int> Batch::src_row(int i) const {
  std::vector<int> row;
  for (size_t j = 0; j < src[static_cast<size_t>(i)].size(); ++j) {
    if (!src_mask[static_cast<size_t>(i)][j]) break;
    row.push_back(src[static_cast<size_t>(i)][j]);
  }
  return row;
}

std::vector<int> Batch::tgt_in_row(int i) const {
  std::vector<int> row;
  for (size_t j = 0; j < tgt_in[static_cast<size_t>(i)].size(); ++j) {
    if (!tgt_mask[static_cast<size_t>(i)][j]) break;
    row.push_back(tgt_in[static_cast<size_t>(i)][j]);
  }
  return row;
}

std::vector<int> Batch::tgt_out_row(int i) const {
  std::vector<int> row;
  for (size_t j = 0; j < tgt_out[static_cast<size_t>(i)].size(); ++j) {
    if (!tgt_mask[static_cast<size_t>(i)][j]) break;
    row.push_back(tgt_out[static_cast<size_t>(i)][j]);
  }
  return row;
}

std::vector<Batch> make_epoch_batches(const std::vector<Example>& examples, int batch_tokens,
                                      uint64_t seed, int64_t epoch) {
  if (examples.empty()) throw ContractError("make_epoch_batches: no examples");
  if (batch_tokens < 1) throw ConfigError("make_epoch_batches: batch_tokens must be >= 1");

  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream rng(seed ^ 0x5b1e'cafe'0000'0000ull, static_cast<uint64_t>(epoch) << 32);
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(order[i - 1], order[j]);
  }

  auto cost = [](const Example& ex) {
    return static_cast<int>(std::max(ex.src.size(), ex.tgt.size())) + 1;
  };

  std::vector<Batch> batches;
  std::vector<const Example*> pending;
  int pending_cost = 0;
  auto flush = [&]() {
    if (pending.empty()) return;
    Batch b;
    size_t max_src = 0, max_tgt = 0;
    for (const auto* ex : pending) {
      max_src = std::max(max_src, ex->src.size() + 1);  // + eos
      max_tgt = std::max(max_tgt, ex->tgt.size() + 1);  // + bos or eos
    }
    for (const auto* ex : pending) {
      std::vector<int> src_row = ex->src;
      src_row.push_back(kEosId);
      std::vector<int> tgt_in_row(1, kBosId);
      tgt_in_row.insert(tgt_in_row.end(), ex->tgt.begin(), ex->tgt.end());
      std::vector<int> tgt_out_row = ex->tgt;
      tgt_out_row.push_back(kEosId);

      std::vector<uint8_t> sm(max_src, 0), tm(max_tgt, 0);
      std::fill(sm.begin(), sm.begin() + static_cast<long>(src_row.size()), 1);
      std::fill(tm.begin(), tm.begin() + static_cast<long>(tgt_in_row.size()), 1);
      src_row.resize(max_src, kPadId);
      tgt_in_row.resize(max_tgt, kPadId);
      tgt_out_row.resize(max_tgt, kPadId);

      b.src.push_back(std::move(src_row));
      b.tgt_in.push_back(std::move(tgt_in_row));
      b.tgt_out.push_back(std::move(tgt_out_row));
      b.src_mask.push_back(std::move(sm));
      b.tgt_mask.push_back(std::move(tm));
    }
    batches.push_back(std::move(b));
    pending.clear();
    pending_cost = 0;
  };

  for (size_t idx : order) {
    const Example& ex = examples[idx];
    const int c = cost(ex);
    if (!pending.empty() && pending_cost + c > batch_tokens) flush();
    pending.push_back(&ex);
    pending_cost += c;
  }
  flush();
  return batches;
}

}  // namespace mat

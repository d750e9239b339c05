#pragma once

#include <string>
#include <vector>

#include "mat/gradcheck.hpp"

namespace mat {

// Finite-difference verification over the whole layer family, in binary64
// with frozen keep/drop factors.
struct GradSuiteConfig {
  int dim = 8;
  int heads = 2;
  int n_a = 3;
  int n_f = 2;
  int t_q = 3;   // query positions
  int t_kv = 4;  // key/value positions
  double rho = 0.2;
  uint64_t seed = 7;
  int points = 5;
  double h = 1e-5;
};

struct OpGradReport {
  std::string op;
  double max_rel_err = 0.0;
};

// Runs grad_check for each of: attn, multi_head, multi_branch, ffn, ffn_drop,
// multi_branch_ffn, drop_head, layer_norm.
std::vector<OpGradReport> run_grad_suite(const GradSuiteConfig& cfg);

}  // namespace mat

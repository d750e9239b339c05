#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mat/ops.hpp"
#include "mat/rng.hpp"

// Attention and FFN layer family: scaled dot-product attention, multi-head
// attention, the branch-averaged variants with stochastic branch/head
// dropping, and the position-wise FFN with its drop and multi-branch forms.
namespace mat {

// Additive attention bias used for surrogate -inf before softmax.
inline constexpr double kMaskNegInf = -1e9;

// Additive pre-softmax mask: 0 keeps a (query, key) pair, kMaskNegInf hides it.
template <typename T>
struct AttnMask {
  Tensor<T> bias;
};

// Lower-triangular visibility for decoder self-attention.
template <typename T>
AttnMask<T> causal_mask(int t) {
  AttnMask<T> m{Tensor<T>::zeros({t, t})};
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) m.bias.at(i, j) = T(kMaskNegInf);
  }
  return m;
}

// One attention head: query/key/value projections, each d x (d/M), no bias.
template <typename T>
struct HeadParams {
  Tensor<T> wq, wk, wv;
};

// One branch: M heads concatenated, plus an optional output projection kept
// behind a config flag for parity with the common transformer formulation.
template <typename T>
struct BranchParams {
  std::vector<HeadParams<T>> heads;
  Tensor<T> wo;  // empty unless output projection is enabled
  Tensor<T> bo;
  bool has_out_proj() const { return !wo.data.empty(); }
};

enum class DropMode { kBranch, kHead };

inline std::string drop_mode_name(DropMode m) { return m == DropMode::kBranch ? "branch" : "head"; }

// The N_a per-branch parameter collections of a multi-branch attention layer,
// together with its stochastic-drop settings.
template <typename T>
struct BranchSet {
  std::vector<BranchParams<T>> branches;
  double drop_rate = 0.0;  // rho, strictly below 1
  DropMode mode = DropMode::kBranch;
  bool train = false;

  int n_branches() const { return static_cast<int>(branches.size()); }
  int n_heads() const { return branches.empty() ? 0 : static_cast<int>(branches[0].heads.size()); }
  // number of keep/scale factors one forward pass consumes
  int n_slots() const {
    return mode == DropMode::kBranch ? n_branches() : n_branches() * n_heads();
  }
  void validate() const {
    if (branches.empty()) throw ConfigError("branch set: needs at least one branch");
    if (drop_rate < 0.0 || drop_rate >= 1.0) {
      throw ConfigError("branch set: drop rate must be in [0,1), got " + std::to_string(drop_rate));
    }
  }
};

// Two-layer position-wise FFN parameters: d -> d_h -> d.
template <typename T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;
};

namespace detail {

template <typename T>
void check_mask_rows(const AttnMask<T>& mask) {
  const int tq = mask.bias.rows(), tk = mask.bias.cols();
  for (int i = 0; i < tq; ++i) {
    bool any_visible = false;
    for (int j = 0; j < tk; ++j) {
      if (mask.bias.at(i, j) > T(kMaskNegInf / 2)) {
        any_visible = true;
        break;
      }
    }
    if (!any_visible) {
      throw ContractError("attention mask: row " + std::to_string(i) + " hides every key");
    }
  }
}

}  // namespace detail

// softmax(Q K^T / sqrt(d') + mask) V
template <typename T>
Tensor<T> scaled_dot_attn(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          const AttnMask<T>* mask = nullptr, Tape<T>* tape = nullptr) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows()) {
    throw DimensionError("scaled_dot_attn: Q " + shape_str(q.shape) + ", K " + shape_str(k.shape) +
                         ", V " + shape_str(v.shape));
  }
  if (mask && (mask->bias.rows() != q.rows() || mask->bias.cols() != k.rows())) {
    throw DimensionError("scaled_dot_attn: mask " + shape_str(mask->bias.shape) + " for Q " +
                         shape_str(q.shape) + ", K " + shape_str(k.shape));
  }
  if (mask) detail::check_mask_rows(*mask);
  Tensor<T> scores = matmul(q, transpose(k, tape), tape);
  scores = scale(scores, T(1.0 / std::sqrt(static_cast<double>(q.cols()))), tape);
  if (mask) scores = add(scores, mask->bias, tape);
  Tensor<T> weights = softmax_rows(scores, tape);
  return matmul(weights, v, tape);
}

// The attention probability matrix of a head, for inspection.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const AttnMask<T>* mask = nullptr) {
  Tensor<T> scores = matmul(q, transpose<T>(k, nullptr));
  scores = scale(scores, T(1.0 / std::sqrt(static_cast<double>(q.cols()))));
  if (mask) scores = add(scores, mask->bias);
  return softmax_rows(scores);
}

// concat over heads of scaled_dot_attn(Q W_Q, K W_K, V W_V) per head.
template <typename T>
Tensor<T> multi_head_attn(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          const BranchParams<T>& branch, const AttnMask<T>* mask = nullptr,
                          Tape<T>* tape = nullptr) {
  if (branch.heads.empty()) throw ConfigError("multi_head_attn: branch has no heads");
  std::vector<Tensor<T>> heads;
  heads.reserve(branch.heads.size());
  for (const auto& hp : branch.heads) {
    heads.push_back(scaled_dot_attn(matmul(q, hp.wq, tape), matmul(k, hp.wk, tape),
                                    matmul(v, hp.wv, tape), mask, tape));
  }
  Tensor<T> out = concat_lastdim(heads, tape);
  if (branch.has_out_proj()) out = add_row(matmul(out, branch.wo, tape), branch.bo, tape);
  return out;
}

// Keep/scale factor per slot: I{U >= rho} / (1 - rho).
template <typename T>
std::vector<T> draw_keep_factors(int count, double rho, RngStream& rng) {
  std::vector<T> factors(static_cast<size_t>(count));
  const T keep = T(1.0 / (1.0 - rho));
  for (auto& f : factors) f = rng.next_uniform() >= rho ? keep : T(0);
  return factors;
}

// Per-branch (or per-head, in head mode) factors for one forward pass.
// Outside training every factor is exactly 1 regardless of the drop rate.
template <typename T>
std::vector<T> draw_branch_masks(const BranchSet<T>& set, RngStream& rng) {
  set.validate();
  if (!set.train) return std::vector<T>(static_cast<size_t>(set.n_slots()), T(1));
  return draw_keep_factors<T>(set.n_slots(), set.drop_rate, rng);
}

// (1/N_a) sum_i factor_i * multi_head_attn(...; theta_i) -- the averaged term
// of the layer, without the residual.
template <typename T>
Tensor<T> multi_branch_attn_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                 const BranchSet<T>& set, const AttnMask<T>* mask,
                                 const std::vector<T>& factors, Tape<T>* tape = nullptr) {
  set.validate();
  if (static_cast<int>(factors.size()) != set.n_branches()) {
    throw ContractError("multi_branch_attn: expected " + std::to_string(set.n_branches()) +
                        " branch factors, got " + std::to_string(factors.size()));
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(set.branches.size());
  for (size_t i = 0; i < set.branches.size(); ++i) {
    outs.push_back(scale(multi_head_attn(q, k, v, set.branches[i], mask, tape), factors[i], tape));
  }
  return mean_over_list(outs, tape);
}

// Q + (1/N_a) sum_i factor_i * multi_head_attn(...; theta_i)
template <typename T>
Tensor<T> multi_branch_attn(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const BranchSet<T>& set, const AttnMask<T>* mask,
                            const std::vector<T>& factors, Tape<T>* tape = nullptr) {
  return add(q, multi_branch_attn_core(q, k, v, set, mask, factors, tape), tape);
}

template <typename T>
Tensor<T> multi_branch_attn(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const BranchSet<T>& set, const AttnMask<T>* mask, RngStream& rng,
                            Tape<T>* tape = nullptr) {
  std::vector<T> factors = set.train ? draw_keep_factors<T>(set.n_branches(), set.drop_rate, rng)
                                     : std::vector<T>(static_cast<size_t>(set.n_branches()), T(1));
  return multi_branch_attn(q, k, v, set, mask, factors, tape);
}

// Per-head drop variant: the keep/scale factor applies inside the concat,
// one per (branch, head) pair, factors laid out branch-major.
template <typename T>
Tensor<T> drop_head_attn_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              const BranchSet<T>& set, const AttnMask<T>* mask,
                              const std::vector<T>& factors, Tape<T>* tape = nullptr) {
  set.validate();
  const int m = set.n_heads();
  if (static_cast<int>(factors.size()) != set.n_branches() * m) {
    throw ContractError("drop_head_attn: expected " + std::to_string(set.n_branches() * m) +
                        " head factors, got " + std::to_string(factors.size()));
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(set.branches.size());
  for (size_t i = 0; i < set.branches.size(); ++i) {
    const auto& branch = set.branches[i];
    std::vector<Tensor<T>> heads;
    heads.reserve(branch.heads.size());
    for (size_t j = 0; j < branch.heads.size(); ++j) {
      const auto& hp = branch.heads[j];
      Tensor<T> h = scaled_dot_attn(matmul(q, hp.wq, tape), matmul(k, hp.wk, tape),
                                    matmul(v, hp.wv, tape), mask, tape);
      heads.push_back(scale(h, factors[i * m + j], tape));
    }
    Tensor<T> branch_out = concat_lastdim(heads, tape);
    if (branch.has_out_proj()) {
      branch_out = add_row(matmul(branch_out, branch.wo, tape), branch.bo, tape);
    }
    outs.push_back(std::move(branch_out));
  }
  return mean_over_list(outs, tape);
}

template <typename T>
Tensor<T> drop_head_attn(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         const BranchSet<T>& set, const AttnMask<T>* mask,
                         const std::vector<T>& factors, Tape<T>* tape = nullptr) {
  return add(q, drop_head_attn_core(q, k, v, set, mask, factors, tape), tape);
}

template <typename T>
Tensor<T> drop_head_attn(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         const BranchSet<T>& set, const AttnMask<T>* mask, RngStream& rng,
                         Tape<T>* tape = nullptr) {
  const int slots = set.n_branches() * set.n_heads();
  std::vector<T> factors = set.train ? draw_keep_factors<T>(slots, set.drop_rate, rng)
                                     : std::vector<T>(static_cast<size_t>(slots), T(1));
  return drop_head_attn(q, k, v, set, mask, factors, tape);
}

// max(x W1 + b1, 0) W2 + b2
template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& w, Tape<T>* tape = nullptr) {
  Tensor<T> h = relu(add_row(matmul(x, w.w1, tape), w.b1, tape), tape);
  return add_row(matmul(h, w.w2, tape), w.b2, tape);
}

// x + factor * ffn(x)
template <typename T>
Tensor<T> residual_ffn_drop(const Tensor<T>& x, const FfnParams<T>& w, T factor,
                            Tape<T>* tape = nullptr) {
  return add(x, scale(ffn(x, w, tape), factor, tape), tape);
}

template <typename T>
Tensor<T> residual_ffn_drop(const Tensor<T>& x, const FfnParams<T>& w, double rho, RngStream& rng,
                            bool train, Tape<T>* tape = nullptr) {
  if (rho < 0.0 || rho >= 1.0) {
    throw ConfigError("residual_ffn_drop: rho must be in [0,1), got " + std::to_string(rho));
  }
  const T factor = train ? draw_keep_factors<T>(1, rho, rng)[0] : T(1);
  return residual_ffn_drop(x, w, factor, tape);
}

// (1/N_f) sum_i factor_i * ffn(x; omega_i) -- without the residual.
template <typename T>
Tensor<T> multi_branch_ffn_core(const Tensor<T>& x, const std::vector<FfnParams<T>>& ws,
                                const std::vector<T>& factors, Tape<T>* tape = nullptr) {
  if (ws.empty()) throw ConfigError("multi_branch_ffn: needs at least one branch");
  if (factors.size() != ws.size()) {
    throw ContractError("multi_branch_ffn: expected " + std::to_string(ws.size()) +
                        " factors, got " + std::to_string(factors.size()));
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(ws.size());
  for (size_t i = 0; i < ws.size(); ++i) {
    outs.push_back(scale(ffn(x, ws[i], tape), factors[i], tape));
  }
  return mean_over_list(outs, tape);
}

// x + (1/N_f) sum_i factor_i * ffn(x; omega_i)
template <typename T>
Tensor<T> multi_branch_ffn(const Tensor<T>& x, const std::vector<FfnParams<T>>& ws,
                           const std::vector<T>& factors, Tape<T>* tape = nullptr) {
  return add(x, multi_branch_ffn_core(x, ws, factors, tape), tape);
}

template <typename T>
Tensor<T> multi_branch_ffn(const Tensor<T>& x, const std::vector<FfnParams<T>>& ws, double rho,
                           RngStream& rng, bool train, Tape<T>* tape = nullptr) {
  if (ws.empty()) throw ConfigError("multi_branch_ffn: needs at least one branch");
  if (rho < 0.0 || rho >= 1.0) {
    throw ConfigError("multi_branch_ffn: rho must be in [0,1), got " + std::to_string(rho));
  }
  std::vector<T> factors = train
                               ? draw_keep_factors<T>(static_cast<int>(ws.size()), rho, rng)
                               : std::vector<T>(ws.size(), T(1));
  return multi_branch_ffn(x, ws, factors, tape);
}

// Standard sin/cos interleaved position table, rows are positions.
template <typename T>
Tensor<T> sinusoidal_positions(int t, int d) {
  if (d % 2 != 0) throw ConfigError("sinusoidal_positions: dim must be even, got " + std::to_string(d));
  if (t <= 0) throw ConfigError("sinusoidal_positions: length must be positive");
  Tensor<T> out = Tensor<T>::zeros({t, d});
  for (int pos = 0; pos < t; ++pos) {
    for (int i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d);
      out.at(pos, 2 * i) = T(std::sin(pos * freq));
      out.at(pos, 2 * i + 1) = T(std::cos(pos * freq));
    }
  }
  return out;
}

}  // namespace mat

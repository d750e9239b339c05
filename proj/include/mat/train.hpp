#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mat/model.hpp"
#include "mat/tasks.hpp"

namespace mat {

struct TrainConfig {
  double base_lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  int warmup_steps = 4000;
  double label_smoothing = 0.1;
  int max_steps = 1000;
  int batch_tokens = 256;
  uint64_t seed = 1;
  int log_every = 50;
  int ckpt_every = 1000;  // 0 disables periodic checkpoints
  double residual_dropout = 0.0;

  void validate() const {
    std::string problems;
    auto fail = [&](const std::string& p) {
      if (!problems.empty()) problems += "; ";
      problems += p;
    };
    if (base_lr <= 0.0) fail("lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0) fail("beta1 must be in [0,1)");
    if (beta2 < 0.0 || beta2 >= 1.0) fail("beta2 must be in [0,1)");
    if (adam_eps <= 0.0) fail("adam_eps must be positive");
    if (warmup_steps < 1) fail("warmup must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must be in [0,1)");
    if (max_steps < 1) fail("max_steps must be >= 1");
    if (batch_tokens < 1) fail("batch_tokens must be >= 1");
    if (log_every < 1) fail("log_every must be >= 1");
    if (ckpt_every < 0) fail("ckpt_every must be >= 0");
    if (residual_dropout < 0.0 || residual_dropout >= 1.0) fail("residual_dropout must be in [0,1)");
    if (!problems.empty()) throw ConfigError("train config: " + problems);
  }
};

// Linear warmup to base_lr at step == warmup, then inverse-sqrt decay.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
  if (step < 1) throw ContractError("lr_at: step must be >= 1, got " + std::to_string(step));
  const double w = static_cast<double>(cfg.warmup_steps);
  const double s = static_cast<double>(step);
  return cfg.base_lr * std::min(s / w, std::sqrt(w / s));
}

// The uniform draw behind the keep/drop decision of (step, sublayer, slot).
// Position-addressed: replayable in any order, and a resumed run reproduces
// the draws of an uninterrupted one.
inline double mask_schedule(uint64_t seed, int64_t step, int sublayer, int slot) {
  return RngStream::uniform_at(seed, mask_counter(step, sublayer, slot));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  int64_t t = 0;
};

template <typename T>
AdamState<T> init_adam(const std::vector<Tensor<T>*>& params) {
  AdamState<T> st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto* p : params) {
    st.m.emplace_back(static_cast<size_t>(p->numel()), T(0));
    st.v.emplace_back(static_cast<size_t>(p->numel()), T(0));
  }
  return st;
}

// One bias-corrected Adam update; increments the shared step counter once.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<std::string>& names,
               const std::vector<const std::vector<T>*>& grads, AdamState<T>& st,
               const TrainConfig& cfg, double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw ContractError("adam_step: parameter/gradient/state count mismatch");
  }
  if (lr <= 0.0) throw ContractError("adam_step: lr must be positive");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T one_minus_b1 = T(1.0 - cfg.beta1), one_minus_b2 = T(1.0 - cfg.beta2);
  const T inv_bc1 = T(1.0 / bc1), inv_bc2 = T(1.0 / bc2);
  const T eps = T(cfg.adam_eps), step_size = T(lr);
  for (size_t i = 0; i < params.size(); ++i) {
    const std::vector<T>& g = *grads[i];
    if (g.size() != params[i]->data.size()) {
      throw ContractError("adam_step: gradient size mismatch for parameter '" +
                          (i < names.size() ? names[i] : std::to_string(i)) + "'");
    }
    if (!kernels::all_finite(g.data(), static_cast<int64_t>(g.size()))) {
      throw NumericError("adam_step: non-finite gradient for parameter '" +
                         (i < names.size() ? names[i] : std::to_string(i)) + "'");
    }
    T* p = params[i]->data.data();
    T* mi = st.m[i].data();
    T* vi = st.v[i].data();
    const int64_t n = static_cast<int64_t>(g.size());
    for (int64_t e = 0; e < n; ++e) {
      mi[e] = b1 * mi[e] + one_minus_b1 * g[e];
      vi[e] = b2 * vi[e] + one_minus_b2 * g[e] * g[e];
      const T mhat = mi[e] * inv_bc1;
      const T vhat = vi[e] * inv_bc2;
      p[e] -= step_size * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Label-smoothed cross entropy
// ---------------------------------------------------------------------------

// Mean over non-pad positions of (1-eps)*NLL + eps * cross-entropy against the
// uniform distribution. Pads contribute nothing.
template <typename T>
Tensor<T> label_smoothed_nll(const Tensor<T>& logits, const std::vector<int>& targets,
                             double eps_ls, int pad_id, Tape<T>* tape = nullptr) {
  if (logits.ndim() != 2 || static_cast<size_t>(logits.rows()) != targets.size()) {
    throw DimensionError("label_smoothed_nll: logits " + shape_str(logits.shape) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (eps_ls < 0.0 || eps_ls >= 1.0) {
    throw ConfigError("label_smoothed_nll: eps must be in [0,1), got " + std::to_string(eps_ls));
  }
  const int64_t rows = logits.rows(), v = logits.cols();
  int64_t n_real = 0;
  for (size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == pad_id) continue;
    if (targets[r] < 0 || targets[r] >= v) {
      throw InputError("label_smoothed_nll: target id " + std::to_string(targets[r]) +
                       " out of range [0," + std::to_string(v) + ") at position " + std::to_string(r));
    }
    ++n_real;
  }
  if (n_real == 0) throw ContractError("label_smoothed_nll: every position is padding");

  // row-wise log-softmax, probabilities saved for the backward pass
  auto probs = std::make_shared<std::vector<T>>(logits.data.size());
  double loss_acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = logits.data.data() + r * v;
    T* p = probs->data() + r * v;
    T mx = x[0];
    for (int64_t c = 1; c < v; ++c) mx = x[c] > mx ? x[c] : mx;
    double sum = 0.0;
    for (int64_t c = 0; c < v; ++c) sum += std::exp(static_cast<double>(x[c] - mx));
    const double lse = std::log(sum) + static_cast<double>(mx);
    for (int64_t c = 0; c < v; ++c) p[c] = T(std::exp(static_cast<double>(x[c]) - lse));
    if (targets[static_cast<size_t>(r)] == pad_id) continue;
    double row_loss = -(1.0 - eps_ls) * (static_cast<double>(x[targets[static_cast<size_t>(r)]]) - lse);
    double sum_logp = 0.0;
    for (int64_t c = 0; c < v; ++c) sum_logp += static_cast<double>(x[c]) - lse;
    row_loss -= eps_ls / static_cast<double>(v) * sum_logp;
    loss_acc += row_loss;
  }
  Tensor<T> out = Tensor<T>::zeros({1});
  out.data[0] = T(loss_acc / static_cast<double>(n_real));
  detail::finite_or_throw("label_smoothed_nll", out);

  if (tape && logits.tracked()) {
    const int px = logits.node;
    auto tgt = std::make_shared<const std::vector<int>>(targets);
    const T w_real = T((1.0 - eps_ls) / static_cast<double>(n_real));
    const T w_unif = T(eps_ls / static_cast<double>(v) / static_cast<double>(n_real));
    out.node = tape->add_node("label_smoothed_nll", {px}, 1,
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                T* gx = tp.grad_slot(px).data();
                                const T* p = probs->data();
                                for (int64_t r = 0; r < rows; ++r) {
                                  const int y = (*tgt)[static_cast<size_t>(r)];
                                  if (y == pad_id) continue;
                                  const T* pr = p + r * v;
                                  T* gr = gx + r * v;
                                  const T total_w = w_real + T(v) * w_unif;
                                  for (int64_t c = 0; c < v; ++c) {
                                    gr[c] += g[0] * (total_w * pr[c] - w_unif);
                                  }
                                  gr[y] -= g[0] * w_real;
                                }
                              });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRow {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double token_acc = 0.0;
};

std::string format_metrics_row(const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> metrics;
  bool aborted = false;
  int64_t abort_step = 0;
  std::string abort_reason;
};

// Runs max_steps of Adam on the training split. When run_dir is non-empty,
// appends metrics.csv rows and writes periodic + final checkpoints there.
// Fully reproducible from (seed, config, data).
TrainResult train_loop(Model<float>& model, const TaskData& data, const TrainConfig& cfg,
                       const std::string& run_dir = "");

}  // namespace mat

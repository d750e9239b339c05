#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mat/kernels.hpp"
#include "mat/rng.hpp"
#include "mat/tape.hpp"
#include "mat/tensor.hpp"

// Differentiable tensor ops. Each op computes its value through the kernels,
// verifies the output is finite, and registers a backward closure on the tape
// when any input is tracked.
namespace mat {

namespace detail {

template <typename T>
inline void finite_or_throw(const char* op, const Tensor<T>& t) {
  if (!kernels::all_finite(t.data.data(), t.numel())) {
    throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

template <typename T>
inline std::shared_ptr<const std::vector<T>> save(const Tensor<T>& t) {
  return std::make_shared<const std::vector<T>>(t.data);
}

template <typename T>
inline void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out = Tensor<T>::zeros({a.rows(), b.cols()});
  kernels::matmul(a.data.data(), b.data.data(), out.data.data(), m, k, n);
  detail::finite_or_throw("matmul", out);
  if (tape && (a.tracked() || b.tracked())) {
    auto sa = detail::save(a);
    auto sb = detail::save(b);
    const int pa = a.node, pb = b.node;
    out.node = tape->add_node("matmul", {pa, pb}, out.numel(),
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                if (pa >= 0) {
                                  kernels::matmul_nt(g.data(), sb->data(),
                                                     tp.grad_slot(pa).data(), m, n, k, true);
                                }
                                if (pb >= 0) {
                                  kernels::matmul_tn(sa->data(), g.data(),
                                                     tp.grad_slot(pb).data(), m, k, n, true);
                                }
                              });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  if (x.ndim() != 2) throw DimensionError("transpose: expected 2-d tensor, got " + shape_str(x.shape));
  const int64_t m = x.rows(), n = x.cols();
  Tensor<T> out = Tensor<T>::zeros({x.cols(), x.rows()});
  kernels::transpose(x.data.data(), out.data.data(), m, n);
  if (tape && x.tracked()) {
    const int px = x.node;
    out.node = tape->add_node("transpose", {px}, out.numel(),
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                kernels::transpose(g.data(), tp.grad_slot(px).data(), n, m, true);
                              });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  detail::require_same_shape("add", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  kernels::add(a.data.data(), b.data.data(), out.data.data(), out.numel());
  detail::finite_or_throw("add", out);
  if (tape && (a.tracked() || b.tracked())) {
    const int pa = a.node, pb = b.node;
    const int64_t n = out.numel();
    out.node = tape->add_node("add", {pa, pb}, n, [=](Tape<T>& tp, const std::vector<T>& g) {
      if (pa >= 0) kernels::add_inplace(tp.grad_slot(pa).data(), g.data(), n);
      if (pb >= 0) kernels::add_inplace(tp.grad_slot(pb).data(), g.data(), n);
    });
  }
  return out;
}

// x[r x c] + row vector b[c] broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (x.ndim() != 2 || b.ndim() != 1 || b.shape[0] != x.cols()) {
    throw DimensionError("add_row: shapes " + shape_str(x.shape) + " + " + shape_str(b.shape));
  }
  const int64_t r = x.rows(), c = x.cols();
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (int64_t i = 0; i < r; ++i) {
    kernels::add(x.data.data() + i * c, b.data.data(), out.data.data() + i * c, c);
  }
  detail::finite_or_throw("add_row", out);
  if (tape && (x.tracked() || b.tracked())) {
    const int px = x.node, pb = b.node;
    out.node = tape->add_node("add_row", {px, pb}, out.numel(),
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                if (px >= 0) kernels::add_inplace(tp.grad_slot(px).data(), g.data(), r * c);
                                if (pb >= 0) {
                                  T* gb = tp.grad_slot(pb).data();
                                  for (int64_t i = 0; i < r; ++i) {
                                    kernels::serial::add_inplace(gb, g.data() + i * c, c);
                                  }
                                }
                              });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T alpha, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  kernels::scale(x.data.data(), alpha, out.data.data(), out.numel());
  detail::finite_or_throw("scale", out);
  if (tape && x.tracked()) {
    const int px = x.node;
    const int64_t n = out.numel();
    out.node = tape->add_node("scale", {px}, n, [=](Tape<T>& tp, const std::vector<T>& g) {
      kernels::axpy(alpha, g.data(), tp.grad_slot(px).data(), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  detail::require_same_shape("mul", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  kernels::mul(a.data.data(), b.data.data(), out.data.data(), out.numel());
  detail::finite_or_throw("mul", out);
  if (tape && (a.tracked() || b.tracked())) {
    auto sa = detail::save(a);
    auto sb = detail::save(b);
    const int pa = a.node, pb = b.node;
    const int64_t n = out.numel();
    out.node = tape->add_node("mul", {pa, pb}, n, [=](Tape<T>& tp, const std::vector<T>& g) {
      if (pa >= 0) kernels::mul_acc(g.data(), sb->data(), tp.grad_slot(pa).data(), n);
      if (pb >= 0) kernels::mul_acc(g.data(), sa->data(), tp.grad_slot(pb).data(), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  kernels::relu(x.data.data(), out.data.data(), out.numel());
  if (tape && x.tracked()) {
    auto sx = detail::save(x);
    const int px = x.node;
    const int64_t n = out.numel();
    out.node = tape->add_node("relu", {px}, n, [=](Tape<T>& tp, const std::vector<T>& g) {
      kernels::relu_backward_acc(sx->data(), g.data(), tp.grad_slot(px).data(), n);
    });
  }
  return out;
}

// Concatenates 2-d tensors along the last dimension, preserving row blocks.
template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
  if (parts.empty()) throw ContractError("concat_lastdim: empty input list");
  const int r = parts[0].rows();
  int total_cols = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.rows() != r) {
      throw DimensionError("concat_lastdim: shape " + shape_str(p.shape) +
                           " does not share leading dims with " + shape_str(parts[0].shape));
    }
    total_cols += p.cols();
    any_tracked = any_tracked || p.tracked();
  }
  Tensor<T> out = Tensor<T>::zeros({r, total_cols});
  int offset = 0;
  for (const auto& p : parts) {
    const int c = p.cols();
    for (int i = 0; i < r; ++i) {
      std::copy(p.data.begin() + static_cast<size_t>(i) * c,
                p.data.begin() + static_cast<size_t>(i + 1) * c,
                out.data.begin() + static_cast<size_t>(i) * total_cols + offset);
    }
    offset += c;
  }
  if (tape && any_tracked) {
    std::vector<int> ids;
    std::vector<int> widths;
    for (const auto& p : parts) {
      ids.push_back(p.node);
      widths.push_back(p.cols());
    }
    out.node = tape->add_node("concat_lastdim", ids, out.numel(),
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                int off = 0;
                                for (size_t pi = 0; pi < ids.size(); ++pi) {
                                  const int c = widths[pi];
                                  if (ids[pi] >= 0) {
                                    T* gp = tp.grad_slot(ids[pi]).data();
                                    for (int i = 0; i < r; ++i) {
                                      kernels::serial::add_inplace(
                                          gp + static_cast<size_t>(i) * c,
                                          g.data() + static_cast<size_t>(i) * total_cols + off, c);
                                    }
                                  }
                                  off += c;
                                }
                              });
  }
  return out;
}

// Elementwise mean of same-shaped tensors. Computed as t0 + mean(t_i - t0),
// which returns t0 bit-for-bit when all inputs are identical.
template <typename T>
Tensor<T> mean_over_list(const std::vector<Tensor<T>>& ts, Tape<T>* tape = nullptr) {
  if (ts.empty()) throw ContractError("mean_over_list: empty input list");
  const int k = static_cast<int>(ts.size());
  for (const auto& t : ts) detail::require_same_shape("mean_over_list", ts[0], t);
  const int64_t n = ts[0].numel();

  Tensor<T> out = Tensor<T>::zeros(ts[0].shape);
  if (k == 1) {
    out.data = ts[0].data;
  } else {
    const T inv_k = T(1) / T(k);
    for (int64_t e = 0; e < n; ++e) {
      T acc = T(0);
      for (int i = 1; i < k; ++i) acc += ts[i].data[e] - ts[0].data[e];
      out.data[e] = acc == T(0) ? ts[0].data[e] : ts[0].data[e] + acc * inv_k;
    }
  }
  detail::finite_or_throw("mean_over_list", out);

  bool any_tracked = false;
  for (const auto& t : ts) any_tracked = any_tracked || t.tracked();
  if (tape && any_tracked) {
    std::vector<int> ids;
    for (const auto& t : ts) ids.push_back(t.node);
    const T inv_k = T(1) / T(k);
    out.node = tape->add_node("mean_over_list", ids, n,
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                for (int id : ids) {
                                  if (id >= 0) kernels::axpy(inv_k, g.data(), tp.grad_slot(id).data(), n);
                                }
                              });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  if (x.ndim() != 2) throw DimensionError("softmax_rows: expected 2-d tensor, got " + shape_str(x.shape));
  const int64_t rows = x.rows(), cols = x.cols();
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  kernels::softmax_rows(x.data.data(), out.data.data(), rows, cols);
  detail::finite_or_throw("softmax_rows", out);
  if (tape && x.tracked()) {
    auto sy = detail::save(out);
    const int px = x.node;
    out.node = tape->add_node("softmax_rows", {px}, out.numel(),
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                T* gx = tp.grad_slot(px).data();
                                const T* y = sy->data();
                                for (int64_t r = 0; r < rows; ++r) {
                                  const T* yr = y + r * cols;
                                  const T* gr = g.data() + r * cols;
                                  T dot = T(0);
                                  for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                                  T* gxr = gx + r * cols;
                                  for (int64_t c = 0; c < cols; ++c) gxr[c] += yr[c] * (gr[c] - dot);
                                }
                              });
  }
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-row standardization with learned gain/bias over the last dimension.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     Tape<T>* tape = nullptr) {
  if (x.ndim() != 2) throw DimensionError("layer_norm: expected 2-d tensor, got " + shape_str(x.shape));
  const int64_t rows = x.rows(), d = x.cols();
  if (gain.ndim() != 1 || bias.ndim() != 1 || gain.shape[0] != d || bias.shape[0] != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape) + " / bias " +
                         shape_str(bias.shape) + " do not match last dim of " + shape_str(x.shape));
  }
  const T eps = T(kLayerNormEps);
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  kernels::layer_norm_rows(x.data.data(), gain.data.data(), bias.data.data(), out.data.data(),
                           rows, d, eps);
  detail::finite_or_throw("layer_norm", out);
  if (tape && (x.tracked() || gain.tracked() || bias.tracked())) {
    auto sx = detail::save(x);
    auto sgain = detail::save(gain);
    const int px = x.node, pg = gain.node, pb = bias.node;
    out.node = tape->add_node(
        "layer_norm", {px, pg, pb}, out.numel(), [=](Tape<T>& tp, const std::vector<T>& g) {
          const T* xd = sx->data();
          const T* gd = sgain->data();
          std::vector<T> xhat(static_cast<size_t>(d));
          std::vector<T> gh(static_cast<size_t>(d));
          for (int64_t r = 0; r < rows; ++r) {
            const T* xr = xd + r * d;
            const T* gr = g.data() + r * d;
            T mean = T(0);
            for (int64_t c = 0; c < d; ++c) mean += xr[c];
            mean /= T(d);
            T var = T(0);
            for (int64_t c = 0; c < d; ++c) {
              const T dv = xr[c] - mean;
              var += dv * dv;
            }
            var /= T(d);
            const T rstd = T(1) / std::sqrt(var + eps);
            T mean_gh = T(0), mean_ghx = T(0);
            for (int64_t c = 0; c < d; ++c) {
              xhat[c] = (xr[c] - mean) * rstd;
              gh[c] = gr[c] * gd[c];
              mean_gh += gh[c];
              mean_ghx += gh[c] * xhat[c];
            }
            mean_gh /= T(d);
            mean_ghx /= T(d);
            if (px >= 0) {
              T* gx = tp.grad_slot(px).data() + r * d;
              for (int64_t c = 0; c < d; ++c) {
                gx[c] += rstd * (gh[c] - mean_gh - xhat[c] * mean_ghx);
              }
            }
            if (pg >= 0) {
              T* gg = tp.grad_slot(pg).data();
              for (int64_t c = 0; c < d; ++c) gg[c] += gr[c] * xhat[c];
            }
            if (pb >= 0) {
              T* gb = tp.grad_slot(pb).data();
              for (int64_t c = 0; c < d; ++c) gb[c] += gr[c];
            }
          }
        });
  }
  return out;
}

// Gathers rows of an embedding table: out[i] = table[ids[i]].
template <typename T>
Tensor<T> lookup_rows(const Tensor<T>& table, const std::vector<int>& ids,
                      Tape<T>* tape = nullptr) {
  if (table.ndim() != 2) {
    throw DimensionError("lookup_rows: table must be 2-d, got " + shape_str(table.shape));
  }
  if (ids.empty()) throw ContractError("lookup_rows: empty id list");
  const int v = table.rows();
  const int64_t d = table.cols();
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) {
      throw InputError("lookup_rows: token id " + std::to_string(ids[i]) + " out of range [0," +
                       std::to_string(v) + ") at position " + std::to_string(i));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({static_cast<int>(ids.size()), static_cast<int>(d)});
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy(table.data.begin() + static_cast<size_t>(ids[i]) * d,
              table.data.begin() + static_cast<size_t>(ids[i] + 1) * d,
              out.data.begin() + i * d);
  }
  if (tape && table.tracked()) {
    const int pt = table.node;
    auto sids = std::make_shared<const std::vector<int>>(ids);
    out.node = tape->add_node("lookup_rows", {pt}, out.numel(),
                              [=](Tape<T>& tp, const std::vector<T>& g) {
                                T* gt = tp.grad_slot(pt).data();
                                for (size_t i = 0; i < sids->size(); ++i) {
                                  kernels::serial::add_inplace(
                                      gt + static_cast<size_t>((*sids)[i]) * d, g.data() + i * d, d);
                                }
                              });
  }
  return out;
}

// Reduces to a 1-element tensor holding the sum of all entries.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros({1});
  out.data[0] = kernels::sum(x.data.data(), x.numel());
  detail::finite_or_throw("sum_all", out);
  if (tape && x.tracked()) {
    const int px = x.node;
    const int64_t n = x.numel();
    out.node = tape->add_node("sum_all", {px}, 1, [=](Tape<T>& tp, const std::vector<T>& g) {
      T* gx = tp.grad_slot(px).data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[0];
    });
  }
  return out;
}

// Inverted dropout: keeps an element with probability 1-rate and rescales by
// 1/(1-rate). Identity when not training or rate is zero.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, RngStream& rng, bool train,
                  Tape<T>* tape = nullptr) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (auto& mv : *mask) mv = rng.next_uniform() >= rate ? keep_scale : T(0);
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  kernels::mul(x.data.data(), mask->data(), out.data.data(), out.numel());
  detail::finite_or_throw("dropout", out);
  if (tape && x.tracked()) {
    const int px = x.node;
    const int64_t n = out.numel();
    out.node = tape->add_node("dropout", {px}, n, [=](Tape<T>& tp, const std::vector<T>& g) {
      kernels::mul_acc(g.data(), mask->data(), tp.grad_slot(px).data(), n);
    });
  }
  return out;
}

}  // namespace mat

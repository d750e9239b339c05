#pragma once

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

// Data-parallel compute kernels. Every kernel exists twice: a serial
// reference under kernels::serial, and an OpenMP-parallel default version.
// Both compute each output element with the exact same accumulation order,
// so results are bit-identical regardless of thread count. The parallel
// versions fall back to a plain loop below the size cutoffs.
namespace mat::kernels {

// Minimum work before a parallel region pays for itself.
inline constexpr int64_t kElemwiseCutoff = 1 << 14;
inline constexpr int64_t kMatmulFlopCutoff = 1 << 15;
inline constexpr int64_t kRowCutoff = 8;

namespace serial {

// c[m x n] = a[m x k] * b[k x n]; accumulates into c when acc is set.
template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
  for (int64_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!acc) {
      for (int64_t j = 0; j < n; ++j) ci[j] = T(0);
    }
    const T* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s = T(0);
      for (int64_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

// c[k x n] = a[m x k]^T * b[m x n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
  for (int64_t i = 0; i < k; ++i) {
    T* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      T s = T(0);
      for (int64_t p = 0; p < m; ++p) s += a[p * k + i] * b[p * n + j];
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

template <typename T>
void transpose(const T* x, T* y, int64_t m, int64_t n, bool acc = false) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      if (acc) {
        y[j * m + i] += x[i * n + j];
      } else {
        y[j * m + i] = x[i * n + j];
      }
    }
  }
}

template <typename T>
void add(const T* a, const T* b, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void add_inplace(T* y, const T* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += x[i];
}

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(const T* x, T alpha, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

template <typename T>
void mul(const T* a, const T* b, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

// y += a .* b
template <typename T>
void mul_acc(const T* a, const T* b, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <typename T>
void relu(const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

// y += g on the support of x > 0 (subgradient at 0 is 0)
template <typename T>
void relu_backward_acc(const T* x, const T* g, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > T(0)) y[i] += g[i];
  }
}

// Row-wise softmax with per-row max subtraction.
template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = xr[c] > mx ? xr[c] : mx;
    T sum = T(0);
    for (int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    const T inv = T(1) / sum;
    for (int64_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
}

// Per-row standardization followed by the affine map gain, bias.
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, int64_t rows, int64_t d,
                     T eps) {
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T* yr = y + r * d;
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
    for (int64_t c = 0; c < d; ++c) yr[c] = (xr[c] - mean) * rstd * gain[c] + bias[c];
  }
}

template <typename T>
T sum(const T* x, int64_t n) {
  T s = T(0);
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
bool all_finite(const T* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

}  // namespace serial

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
#ifdef _OPENMP
  if (m * k * n >= kMatmulFlopCutoff && m >= 2) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      serial::matmul(a + i * k, b, c + i * n, 1, k, n, acc);
    }
    return;
  }
#endif
  serial::matmul(a, b, c, m, k, n, acc);
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
#ifdef _OPENMP
  if (m * k * n >= kMatmulFlopCutoff && m >= 2) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      serial::matmul_nt(a + i * k, b, c + i * n, 1, k, n, acc);
    }
    return;
  }
#endif
  serial::matmul_nt(a, b, c, m, k, n, acc);
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
#ifdef _OPENMP
  if (m * k * n >= kMatmulFlopCutoff && k >= 2) {
    // rows of c correspond to columns of a; each is independent
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < k; ++i) {
      T* ci = c + i * n;
      for (int64_t j = 0; j < n; ++j) {
        T s = T(0);
        for (int64_t p = 0; p < m; ++p) s += a[p * k + i] * b[p * n + j];
        ci[j] = acc ? ci[j] + s : s;
      }
    }
    return;
  }
#endif
  serial::matmul_tn(a, b, c, m, k, n, acc);
}

template <typename T>
void transpose(const T* x, T* y, int64_t m, int64_t n, bool acc = false) {
#ifdef _OPENMP
  if (m * n >= kElemwiseCutoff && m >= 2) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        if (acc) {
          y[j * m + i] += x[i * n + j];
        } else {
          y[j * m + i] = x[i * n + j];
        }
      }
    }
    return;
  }
#endif
  serial::transpose(x, y, m, n, acc);
}

template <typename T>
void add(const T* a, const T* b, T* y, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
    return;
  }
#endif
  serial::add(a, b, y, n);
}

template <typename T>
void add_inplace(T* y, const T* x, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] += x[i];
    return;
  }
#endif
  serial::add_inplace(y, x, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
    return;
  }
#endif
  serial::axpy(alpha, x, y, n);
}

template <typename T>
void scale(const T* x, T alpha, T* y, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
    return;
  }
#endif
  serial::scale(x, alpha, y, n);
}

template <typename T>
void mul(const T* a, const T* b, T* y, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
    return;
  }
#endif
  serial::mul(a, b, y, n);
}

template <typename T>
void mul_acc(const T* a, const T* b, T* y, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
    return;
  }
#endif
  serial::mul_acc(a, b, y, n);
}

template <typename T>
void relu(const T* x, T* y, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return;
  }
#endif
  serial::relu(x, y, n);
}

template <typename T>
void relu_backward_acc(const T* x, const T* g, T* y, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      if (x[i] > T(0)) y[i] += g[i];
    }
    return;
  }
#endif
  serial::relu_backward_acc(x, g, y, n);
}

template <typename T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t cols) {
#ifdef _OPENMP
  if (rows >= kRowCutoff && rows * cols >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      serial::softmax_rows(x + r * cols, y + r * cols, 1, cols);
    }
    return;
  }
#endif
  serial::softmax_rows(x, y, rows, cols);
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, int64_t rows, int64_t d,
                     T eps) {
#ifdef _OPENMP
  if (rows >= kRowCutoff && rows * d >= kElemwiseCutoff) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      serial::layer_norm_rows(x + r * d, gain, bias, y + r * d, 1, d, eps);
    }
    return;
  }
#endif
  serial::layer_norm_rows(x, gain, bias, y, rows, d, eps);
}

// Reductions stay serial so the summation order never depends on the
// thread count.
template <typename T>
T sum(const T* x, int64_t n) {
  return serial::sum(x, n);
}

template <typename T>
bool all_finite(const T* x, int64_t n) {
#ifdef _OPENMP
  if (n >= kElemwiseCutoff) {
    bool ok = true;
#pragma omp parallel for schedule(static) reduction(&& : ok)
    for (int64_t i = 0; i < n; ++i) ok = ok && std::isfinite(x[i]);
    return ok;
  }
#endif
  return serial::all_finite(x, n);
}

}  // namespace mat::kernels

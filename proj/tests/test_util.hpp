#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "mat/rng.hpp"
#include "mat/tensor.hpp"

namespace testutil {

template <typename T>
mat::Tensor<T> tensor2(int r, int c, std::vector<T> data) {
  return mat::Tensor<T>({r, c}, std::move(data));
}

template <typename T>
mat::Tensor<T> tensor1(std::vector<T> data) {
  const int n = static_cast<int>(data.size());
  return mat::Tensor<T>({n}, std::move(data));
}

template <typename T>
mat::Tensor<T> random_tensor(mat::Shape shape, mat::RngStream& rng, double lo = -1.0,
                             double hi = 1.0) {
  mat::Tensor<T> t = mat::Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.data) v = T(lo + (hi - lo) * rng.next_uniform());
  return t;
}

template <typename T>
double max_abs_diff(const mat::Tensor<T>& a, const mat::Tensor<T>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::fabs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  }
  return m;
}

template <typename T>
bool bitwise_equal(const mat::Tensor<T>& a, const mat::Tensor<T>& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(T)) == 0;
}

// Independent triple-loop product used as the matmul oracle.
template <typename T>
mat::Tensor<T> matmul_oracle(const mat::Tensor<T>& a, const mat::Tensor<T>& b) {
  mat::Tensor<T> c = mat::Tensor<T>::zeros({a.rows(), b.cols()});
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < b.cols(); ++j) {
      T s = T(0);
      for (int k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  }
  return c;
}

}  // namespace testutil

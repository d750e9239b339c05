#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mat/error.hpp"

namespace mat {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major value. `node` is an optional handle into a Tape; -1 means
// the tensor is a plain constant that no gradient flows through.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  int node = -1;

  Tensor() = default;

  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape();
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not match data length " +
                           std::to_string(data.size()));
    }
  }

  static Tensor zeros(Shape s) { return full(std::move(s), T(0)); }

  static Tensor full(Shape s, T v) {
    Tensor t;
    t.shape = std::move(s);
    t.check_shape();
    t.data.assign(static_cast<size_t>(shape_numel(t.shape)), v);
    return t;
  }

  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool tracked() const { return node >= 0; }

  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

 private:
  void check_shape() const {
    for (int d : shape) {
      if (d <= 0) throw DimensionError("tensor: non-positive dimension in " + shape_str(shape));
    }
  }
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace mat

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mat/ops.hpp"
#include "mat/tape.hpp"
#include "mat/tensor.hpp"

namespace mat {

// Scalar-valued function of a set of tensors, differentiable through a tape.
// Called with tape == nullptr for plain (finite-difference) evaluations.
using ScalarFn = std::function<Tensor<double>(Tape<double>*, std::vector<Tensor<double>>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_input = -1;
  int64_t worst_coord = -1;
};

// Central-difference gradient check in binary64. Returns the max over all
// coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                                  double h) {
  if (h <= 0.0) throw ContractError("grad_check: step h must be positive");

  // analytic gradients through the tape
  Tape<double> tape;
  std::vector<Tensor<double>> tracked;
  tracked.reserve(inputs.size());
  for (const auto& in : inputs) tracked.push_back(tape.leaf(in));
  Tensor<double> loss = f(&tape, tracked);
  if (loss.numel() != 1) {
    throw ContractError("grad_check: function must return a scalar, got " + shape_str(loss.shape));
  }
  tape.backward(loss.node);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(tracked.size());
  for (const auto& t : tracked) analytic.push_back(tape.grad(t.node));

  auto eval = [&](std::vector<Tensor<double>>& xs, size_t input, int64_t coord) {
    Tensor<double> v;
    try {
      v = f(nullptr, xs);
    } catch (const NumericError& e) {
      throw NumericError("grad_check: non-finite value at probe of input " +
                         std::to_string(input) + " coord " + std::to_string(coord) + ": " +
                         e.what());
    }
    return v.data[0];
  };

  GradCheckReport report;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t c = 0; c < inputs[i].numel(); ++c) {
      const double saved = inputs[i].data[c];
      inputs[i].data[c] = saved + h;
      const double f_plus = eval(inputs, i, c);
      inputs[i].data[c] = saved - h;
      const double f_minus = eval(inputs, i, c);
      inputs[i].data[c] = saved;
      const double g_fd = (f_plus - f_minus) / (2.0 * h);
      const double g_ad = analytic[i][static_cast<size_t>(c)];
      const double denom = std::max({1.0, std::fabs(g_ad), std::fabs(g_fd)});
      const double rel = std::fabs(g_ad - g_fd) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = static_cast<int>(i);
        report.worst_coord = c;
      }
    }
  }
  return report;
}

}  // namespace mat

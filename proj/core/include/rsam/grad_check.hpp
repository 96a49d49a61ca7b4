#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rsam/tensor.hpp"

namespace rsam {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct TensorGradCheck {
  std::string name;
  std::size_t entries = 0;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double tape_grad = 0.0;  // at worst_index
  double fd_grad = 0.0;    // at worst_index
  bool passed = true;
};

struct GradCheckReport {
  std::vector<TensorGradCheck> tensors;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  // Names of tensors whose worst entry exceeds the tolerance.
  std::vector<std::string> failures() const;
};

using LossFn = std::function<Tensor(Tape&)>;

// |a - b| / max(1e-8, |a| + |b|)
double relative_error(double tape_grad, double fd_grad);

// Compares the tape gradient of every entry of every listed tensor with the
// central difference (f(x+h) - f(x-h)) / 2h. `loss` must be a pure function of
// the listed tensors. Requires 64-bit precision.
GradCheckReport grad_check(const LossFn& loss, std::span<const NamedTensor> params, double h = 1e-5,
                           double tol = 1e-4);

}  // namespace rsam

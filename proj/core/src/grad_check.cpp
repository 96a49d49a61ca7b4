#include "rsam/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace rsam {

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> names;
  for (const auto& t : tensors) {
    if (!t.passed) names.push_back(t.name);
  }
  return names;
}

double relative_error(double tape_grad, double fd_grad) {
  return std::abs(tape_grad - fd_grad) / std::max(1e-8, std::abs(tape_grad) + std::abs(fd_grad));
}

GradCheckReport grad_check(const LossFn& loss, std::span<const NamedTensor> params, double h, double tol) {
  if (precision() != Precision::f64) throw ArgumentError("grad_check requires 64-bit precision");
  if (!(h > 0.0)) throw ArgumentError("grad_check: step must be positive");

  std::vector<Tensor> tensors;
  for (const auto& p : params) tensors.push_back(p.tensor);
  zero_grads(tensors);
  {
    Tape tape;
    backward(loss(tape), tape);
  }

  const auto evaluate = [&loss]() {
    Tape forward_only(false);
    return loss(forward_only).item();
  };

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = tensors[p];
    TensorGradCheck row;
    row.name = params[p].name;
    row.entries = t.size();
    auto v = t.values();
    const auto g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double plus = evaluate();
      v[i] = saved - h;
      const double minus = evaluate();
      v[i] = saved;
      const double fd = (plus - minus) / (2.0 * h);
      const double err = relative_error(g[i], fd);
      row.max_abs_error = std::max(row.max_abs_error, std::abs(g[i] - fd));
      if (i == 0 || err > row.max_rel_error) {
        row.max_rel_error = err;
        row.worst_index = i;
        row.tape_grad = g[i];
        row.fd_grad = fd;
      }
    }
    row.passed = row.max_rel_error <= tol;
    report.max_rel_error = std::max(report.max_rel_error, row.max_rel_error);
    report.max_abs_error = std::max(report.max_abs_error, row.max_abs_error);
    report.passed = report.passed && row.passed;
    report.tensors.push_back(std::move(row));
  }
  return report;
}

}  // namespace rsam

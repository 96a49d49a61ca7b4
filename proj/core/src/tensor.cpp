#include "rsam/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace rsam {

namespace {

std::atomic<Precision> g_precision{Precision::f64};

}  // namespace

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

double round_to_precision(double v) {
  if (precision() == Precision::f32) return static_cast<double>(static_cast<float>(v));
  return v;
}

void round_to_precision(std::span<double> values) {
  if (precision() != Precision::f32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
};

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  const std::size_t n = shape_size(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->values.assign(n, value);
  t.impl_->grad.assign(n, 0.0);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.impl_->values = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->values.size(); }
std::span<double> Tensor::values() { return impl_->values; }
std::span<const double> Tensor::values() const { return impl_->values; }
std::span<double> Tensor::grad() { return impl_->grad; }
std::span<const double> Tensor::grad() const { return impl_->grad; }

double Tensor::item() const {
  if (size() != 1) throw ArgumentError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::is_leaf() const { return impl_->leaf; }
void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>(*impl_);
  t.impl_->leaf = true;
  return t;
}

Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs) {
  bool rg = false;
  for (const Tensor* in : inputs) rg = rg || in->requires_grad();
  return Tensor::zeros(std::move(shape), rg);
}

void zero_grads(std::span<Tensor> tensors) {
  for (Tensor& t : tensors) t.zero_grad();
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  round_to_precision(output.values());
  if (!recording_ || !output.requires_grad()) return;
  output.impl_->leaf = false;
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.size() != 1) {
    throw ArgumentError("backward requires a scalar loss");
  }
  Tensor root = loss;
  if (root.is_leaf()) {
    if (root.requires_grad()) root.grad()[0] += 1.0;
    return;
  }

  // Leaf gradients are computed from zero and then added to what was already
  // there, so repeated calls accumulate exactly.
  std::vector<Tensor> leaves;
  std::unordered_set<const void*> seen;
  for (auto& node : tape.nodes_) {
    node.output.zero_grad();
    for (auto& in : node.inputs) {
      if (in.requires_grad() && in.is_leaf() && seen.insert(in.id()).second) leaves.push_back(in);
    }
  }
  std::vector<std::vector<double>> saved;
  saved.reserve(leaves.size());
  for (auto& leaf : leaves) {
    saved.emplace_back(leaf.grad().begin(), leaf.grad().end());
    leaf.zero_grad();
  }

  root.grad()[0] = 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    it->backward();
    if (precision() == Precision::f32) {
      for (auto& in : it->inputs) {
        if (in.requires_grad()) round_to_precision(in.grad());
      }
    }
  }

  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto g = leaves[i].grad();
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = saved[i][j] + g[j];
    round_to_precision(g);
  }
}

}  // namespace rsam

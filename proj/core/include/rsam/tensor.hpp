#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsam {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Global value precision. Storage is always double; under f32 every op output
// and every backward contribution is rounded through float, so the numbers a
// tensor holds are exactly the ones 32-bit storage would hold.
enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();
double round_to_precision(double v);
void round_to_precision(std::span<double> values);

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Shared handle to a dense row-major array with a same-shape gradient buffer.
// Copies alias the same storage; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<double> values();
  std::span<const double> values() const;
  std::span<double> grad();
  std::span<const double> grad() const;

  double item() const;
  double& at(std::size_t flat) { return values()[flat]; }
  double at(std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  // True for tensors not produced by a recorded op (parameters, inputs).
  bool is_leaf() const;

  void zero_grad();
  Tensor clone() const;

  // Identity of the underlying storage.
  const void* id() const { return impl_.get(); }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;

  friend class Tape;
  friend Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs);
};

// Allocates an op output; requires_grad is set when any input requires it.
Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs);

void zero_grads(std::span<Tensor> tensors);

// Ordered record of executed ops. Nodes are appended in forward order, which
// is therefore a valid topological order; backward walks them once in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  // A non-recording tape runs ops forward only (evaluation, finite differences).
  explicit Tape(bool recording) : recording_(recording) {}
  bool recording() const { return recording_; }

  // Records an op whose output requires grad; no-op otherwise. Marks the
  // output as non-leaf and applies the precision rounding to its values.
  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;

  friend void backward(const Tensor& loss, Tape& tape);
};

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
// Repeated calls accumulate until zero_grads.
void backward(const Tensor& loss, Tape& tape);

// ---- differentiable ops ----------------------------------------------------

// x[B,I] * w[I,O] + b[O]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation. x[B,C,H,W], k[F,C,Kh,Kw], b[F].
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad);

// Non-overlapping or strided max pooling; ties route to the first (row-major) max.
Tensor maxpool2d(Tape& tape, const Tensor& x, int window, int stride);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh_op(Tape& tape, const Tensor& x);

// Same shapes, or b is [B,1,...] broadcast over a's axis 1.
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor sum(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count);

// Row-wise softmax over [B,K] with max subtraction.
Tensor softmax(Tape& tape, const Tensor& x);

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over rows of -ln(max(probs[n, target_n], 1e-12)).
Tensor cross_entropy(Tape& tape, const Tensor& probs, std::span<const int> targets);

enum class Mode { train, eval };

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Per-feature normalization for [B,F], per-channel over B*H*W for [B,C,H,W].
// Train mode uses batch statistics and updates the running averages in place
// (running variance uses the unbiased batch estimate).
Tensor batch_norm(Tape& tape, const Tensor& x, const BatchNormParams& p, Mode mode,
                  double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

}  // namespace rsam

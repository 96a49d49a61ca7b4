#pragma once

#include <vector>

#include "rsam/layers.hpp"

namespace rsam {

inline constexpr double kMomentum = 0.9;
inline constexpr double kWeightDecay = 1e-4;
inline constexpr double kInitialLearningRate = 0.01;
inline constexpr double kLearningRateDecay = 0.95;

struct SgdHyper {
  double momentum = kMomentum;
  double weight_decay = kWeightDecay;
};

// One zero-initialized velocity per trainable parameter, in registry order.
class SgdState {
 public:
  explicit SgdState(const LayerParams& params, SgdHyper hyper = {});

  const SgdHyper& hyper() const { return hyper_; }
  std::span<const Tensor> velocity() const { return velocity_; }

 private:
  SgdHyper hyper_;
  std::vector<Tensor> velocity_;

  friend void sgd_step(LayerParams& params, SgdState& state, double lr);
};

// v <- mu*v - lr*(g + lambda*theta); theta <- theta + v.
// Decay applies to ParamKind::weight only; running statistics are skipped.
void sgd_step(LayerParams& params, SgdState& state, double lr);

// initial_lr * decay^epoch
double lr_schedule(double initial_lr, double decay, int epoch);

}  // namespace rsam

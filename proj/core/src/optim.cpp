#include "rsam/optim.hpp"

#include <cmath>

namespace rsam {

SgdState::SgdState(const LayerParams& params, SgdHyper hyper) : hyper_(hyper) {
  for (const auto& e : params.entries()) {
    if (is_trainable(e.kind)) velocity_.push_back(Tensor::zeros(e.tensor.shape()));
  }
}

void sgd_step(LayerParams& params, SgdState& state, double lr) {
  if (!(lr > 0.0)) throw ArgumentError("sgd_step: learning rate must be positive");
  std::size_t slot = 0;
  for (const auto& e : params.entries()) {
    if (!is_trainable(e.kind)) continue;
    if (slot >= state.velocity_.size() || state.velocity_[slot].shape() != e.tensor.shape()) {
      throw std::logic_error("sgd_step: velocity does not mirror parameter '" + e.name + "'");
    }
    Tensor theta = e.tensor;
    auto v = state.velocity_[slot++].values();
    auto w = theta.values();
    const auto g = theta.grad();
    const double decay = e.kind == ParamKind::weight ? state.hyper_.weight_decay : 0.0;
    const double mu = state.hyper_.momentum;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = round_to_precision(mu * v[i] - lr * (g[i] + decay * w[i]));
      w[i] = round_to_precision(w[i] + v[i]);
    }
  }
  if (slot != state.velocity_.size()) throw std::logic_error("sgd_step: velocity count mismatch");
}

double lr_schedule(double initial_lr, double decay, int epoch) {
  if (epoch < 0) throw ArgumentError("lr_schedule: epoch must be >= 0");
  return initial_lr * std::pow(decay, epoch);
}

}  // namespace rsam

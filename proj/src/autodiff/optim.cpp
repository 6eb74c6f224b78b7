#include "msg3d/autodiff/optim.hpp"

#include <algorithm>
#include <stdexcept>

namespace msg3d::ad {

double lr_schedule(OptimizerState& state, int epoch) {
  double lr = state.base_lr;
  for (int m : state.milestones) {
    if (epoch >= m) lr *= state.decay_factor;
  }
  state.epoch = epoch;
  state.learning_rate = lr;
  return lr;
}

void sgd_step(OptimizerState& state, std::span<Parameter> params) {
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.velocity[i].assign(params[i].tensor.numel(), 0.0);
    }
  }
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: parameter count changed");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.tensor.has_grad()) {
      throw std::invalid_argument("sgd_step: parameter '" + p.name + "' has no gradient");
    }
    auto& v = state.velocity[i];
    if (v.size() != p.tensor.numel()) {
      throw std::invalid_argument("sgd_step: velocity shape mismatch for '" + p.name + "'");
    }
    const double wd = p.weight_decay_exempt ? 0.0 : state.weight_decay;
    auto values = p.tensor.values();
    const auto g = std::as_const(p.tensor).grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j] + wd * values[j];
      values[j] -= state.learning_rate * v[j];
    }
  }
}

double linear_scaled_lr(double lr, std::size_t batch, std::size_t reference) {
  if (reference == 0) throw std::invalid_argument("linear_scaled_lr: reference batch is 0");
  return lr * static_cast<double>(batch) / static_cast<double>(reference);
}

void zero_grads(std::span<Parameter> params) {
  for (Parameter& p : params) p.tensor.zero_grad();
}

}  // namespace msg3d::ad

#pragma once

#include "msg3d/autodiff/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace msg3d::ad {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool weight_decay_exempt = false;
};

/// SGD with momentum and step decay.
struct OptimizerState {
  double base_lr = 0.05;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> milestones{30, 40};
  double decay_factor = 0.1;
  int epoch = 0;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter, lazily sized
};

/// Sets and returns the learning rate for `epoch` (0-based): base_lr times
/// decay_factor for every milestone <= epoch.
double lr_schedule(OptimizerState& state, int epoch);

/// v <- m v + g + wd p;  p <- p - lr v.
/// @throws std::invalid_argument if a parameter has no gradient or the
///         parameter list changed shape since the previous step.
void sgd_step(OptimizerState& state, std::span<Parameter> params);

/// lr * batch / reference, the linear batch-size scaling rule.
double linear_scaled_lr(double lr, std::size_t batch, std::size_t reference = 32);

void zero_grads(std::span<Parameter> params);

}  // namespace msg3d::ad

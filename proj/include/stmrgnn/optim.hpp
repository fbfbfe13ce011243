#pragma once

#include <cstdint>
#include <vector>

#include "stmrgnn/tensor.hpp"

namespace stmrgnn {

struct AdamOptions {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled: theta -= lr * weight_decay * theta, separate from the moment update.
  double weight_decay = 1e-5;
};

struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const std::vector<Tensor>& params, const AdamOptions& options);

// One in-place update of every parameter from its current gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grads(std::vector<Tensor>& params);

}  // namespace stmrgnn

#pragma once

#include <functional>
#include <vector>

#include "stmrgnn/tensor.hpp"

namespace stmrgnn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the reverse-mode gradient of a scalar function against central
// differences, coordinate by coordinate:
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-8)
// `x` must be a requires_grad leaf; `f` rebuilds the graph from it on every call.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step = 1e-6);

// Same check over several leaves at once (e.g. all model parameters). With
// `max_coords_per_tensor` > 0, only that many evenly spaced coordinates of each
// tensor are perturbed.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double step = 1e-6,
                           std::size_t max_coords_per_tensor = 0);

}  // namespace stmrgnn

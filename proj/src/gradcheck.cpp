#include "stmrgnn/gradcheck.hpp"

#include <cmath>

#include "stmrgnn/errors.hpp"

namespace stmrgnn {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double step,
                           std::size_t max_coords_per_tensor) {
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw ContractError("grad_check: inputs must require grad");
    leaf.zero_grad();
  }
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  GradCheckResult result;
  std::size_t flat_offset = 0;
  bool first = true;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto values = leaves[t].mutable_data();
    const std::size_t n = values.size();
    const std::size_t stride = (max_coords_per_tensor && n > max_coords_per_tensor) ? n / max_coords_per_tensor : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = values[i];
      values[i] = original + step;
      const double up = evaluate(f);
      values[i] = original - step;
      const double down = evaluate(f);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][i];
      const double err = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-8);
      if (first || err > result.max_relative_error) {
        first = false;
        result.max_relative_error = err;
        result.worst_index = flat_offset + i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
    flat_offset += n;
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  return grad_check([&] { return f(x); }, std::vector<Tensor>{x}, step);
}

}  // namespace stmrgnn

#include "stmrgnn/optim.hpp"

#include <cmath>

#include "stmrgnn/errors.hpp"

namespace stmrgnn {

AdamState make_adam_state(const std::vector<Tensor>& params, const AdamOptions& options) {
  AdamState state;
  state.options = options;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but state tracks " +
                        std::to_string(state.first_moment.size()));
  }
  const AdamOptions& opt = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (!p.has_grad() || p.grad().size() != m.size() || v.size() != m.size()) {
      throw ContractError("adam_step: gradient/moment shape mismatch for parameter " + std::to_string(i) + " " +
                          shape_str(p.shape()));
    }
    const auto g = p.grad();
    auto theta = p.mutable_data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      theta[j] -= opt.learning_rate * (m_hat / (std::sqrt(v_hat) + opt.epsilon) + opt.weight_decay * theta[j]);
    }
  }
}

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace stmrgnn

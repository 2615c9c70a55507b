#include "atseg/adam.hpp"

#include <cmath>
#include <string>

#include "atseg/errors.hpp"

namespace atseg {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("Adam: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("Adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ContractError("Adam: eps must be positive");
}

void adam_step(std::span<Parameter> params, AdamState& state, const AdamConfig& config) {
  config.validate();
  if (state.m.empty() && state.v.empty()) {
    for (const Parameter& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors but " +
                     std::to_string(params.size()) + " parameters were given");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].value.shape();
    if (params[i].grad.shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape) {
      throw ShapeError("adam_step: parameter '" + params[i].name + "' " + shape_str(shape) + ", grad " +
                       shape_str(params[i].grad.shape()) + ", state " + shape_str(state.m[i].shape()));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double m_correction = 1.0 - std::pow(config.beta1, t);
  const double v_correction = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value.data();
    auto grad = params[i].grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grad[k];
      const double m_new = config.beta1 * m[k] + (1.0 - config.beta1) * g;
      const double v_new = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
      m[k] = static_cast<float>(m_new);
      v[k] = static_cast<float>(v_new);
      const double m_hat = m_new / m_correction;
      const double v_hat = v_new / v_correction;
      theta[k] = static_cast<float>(theta[k] - config.lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
}

}  // namespace atseg

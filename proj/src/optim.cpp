#include "cardiofuse/optim.hpp"

#include <cmath>

#include "cardiofuse/errors.hpp"

namespace cardiofuse {

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments, std::uint64_t step,
                 const AdamConfig& config) {
  if (grad.size() != param.size() || moments.first.size() != param.size() ||
      moments.second.size() != param.size()) {
    throw ContractError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw ContractError("adam_update: step index is 1-based");
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    param[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

AdamOptimizer::AdamOptimizer(const ModelBundle& model, AdamConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw ConfigError("adam: learning rate must be > 0");
  for (const auto& p : model.parameters()) {
    state_.moments[p.name] = AdamMoments{std::vector<double>(p.tensor.size(), 0.0),
                                         std::vector<double>(p.tensor.size(), 0.0)};
  }
}

void AdamOptimizer::step(const ModelBundle& model) {
  ++state_.step;
  std::vector<double> zeros;
  for (auto p : model.parameters()) {
    if (!p.tensor.requires_grad()) continue;
    auto it = state_.moments.find(p.name);
    if (it == state_.moments.end()) throw ContractError("adam: parameter '" + p.name + "' has no optimizer state");
    std::span<const double> grad = p.tensor.grad();
    if (grad.empty()) {
      zeros.assign(p.tensor.size(), 0.0);
      grad = zeros;
    }
    adam_update(p.tensor.mutable_data(), grad, it->second, state_.step, config_);
    p.tensor.zero_grad();
  }
}

}  // namespace cardiofuse

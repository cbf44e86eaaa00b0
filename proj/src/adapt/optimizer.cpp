#include "battta/optimizer.hpp"

#include <cmath>

#include "battta/errors.hpp"

namespace battta {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer lr must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer eps must be > 0");
  if (weight_decay < 0.0) throw ConfigError("optimizer weight_decay must be >= 0");
}

void step_adamw(std::vector<NamedParam>& params, OptimizerState& state, const OptimizerConfig& cfg) {
  for (const auto& p : params) {
    if (!p.value.has_grad()) throw ContractError("step_adamw: parameter '" + p.name + "' has no gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double wd = cfg.kind == OptimizerKind::adamw ? cfg.weight_decay : 0.0;

  for (auto& p : params) {
    auto data = p.value.mutable_data();
    auto grad = p.value.grad();
    auto& mom = state.moments[p.name];
    if (mom.m.empty()) {
      mom.m.assign(data.size(), 0.0);
      mom.v.assign(data.size(), 0.0);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (wd != 0.0) data[i] -= cfg.lr * wd * data[i];
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * grad[i];
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace battta

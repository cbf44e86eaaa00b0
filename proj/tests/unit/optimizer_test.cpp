#include <gtest/gtest.h>

#include <cmath>

#include "battta/errors.hpp"
#include "battta/optimizer.hpp"
#include "battta/ops.hpp"

namespace battta {
namespace {

// Parameter p with gradient g, built through a scalar loss g * p.
NamedParam param_with_grad(double p, double g) {
  Tensor value({1}, {p}, true);
  ops::sum(ops::mul_scalar(value, Tensor::scalar(g))).backward();
  return {"p", value};
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  std::vector<NamedParam> ps{param_with_grad(1.0, 1.0)};
  OptimizerState state;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::adam;
  cfg.lr = 0.1;
  step_adamw(ps, state, cfg);
  EXPECT_NEAR(ps[0].value.at(0), 0.9, 1e-7);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, DecoupledDecayOnZeroGradient) {
  std::vector<NamedParam> ps{param_with_grad(2.0, 0.0)};
  OptimizerState state;
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  step_adamw(ps, state, cfg);
  EXPECT_NEAR(ps[0].value.at(0), 2.0 * (1.0 - 0.1 * 0.5), 1e-15);

  std::vector<NamedParam> plain{param_with_grad(2.0, 0.0)};
  OptimizerState s2;
  cfg.kind = OptimizerKind::adam;
  step_adamw(plain, s2, cfg);
  EXPECT_EQ(plain[0].value.at(0), 2.0);
}

TEST(AdamW, MomentsAccumulateAcrossSteps) {
  OptimizerState state;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::adam;
  cfg.lr = 0.01;
  Tensor value({1}, {0.0}, true);
  std::vector<NamedParam> ps{{"p", value}};
  double m = 0.0, v = 0.0, p = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 0.3 * t - 0.7;
    value.zero_grad();
    ops::sum(ops::mul_scalar(value, Tensor::scalar(g))).backward();
    step_adamw(ps, state, cfg);
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
    p -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    EXPECT_NEAR(value.at(0), p, 1e-12) << t;
  }
  EXPECT_EQ(state.moments.size(), 1u);
}

TEST(AdamW, MissingGradientIsNamed) {
  std::vector<NamedParam> ps{{"visual.ln_post.gamma", Tensor({2}, {1.0, 1.0}, true)}};
  OptimizerState state;
  try {
    step_adamw(ps, state, {});
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("visual.ln_post.gamma"), std::string::npos);
  }
}

TEST(AdamW, ConfigValidation) {
  OptimizerConfig cfg;
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.weight_decay = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace battta

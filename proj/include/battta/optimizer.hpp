#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "battta/tensor.hpp"

namespace battta {

enum class OptimizerKind { adam, adamw };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // ignored by plain Adam

  void validate() const;
};

// Moment buffers for the scoped parameters only, keyed by parameter name.
struct OptimizerState {
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;
};

struct NamedParam {
  std::string name;
  Tensor value;
};

// One bias-corrected Adam(W) update. AdamW first applies the decoupled decay
// p <- p - lr * wd * p. Every parameter must carry a gradient; a missing one
// raises ContractError naming it. State entries are created on first use.
void step_adamw(std::vector<NamedParam>& params, OptimizerState& state, const OptimizerConfig& cfg);

}  // namespace battta

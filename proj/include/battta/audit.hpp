#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace battta::bench {

struct AuditCheck {
  std::string name;  // "op/<op>", "loss/<term>" or "encoder/<tower>"
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  bool passed = true;
};

struct AuditConfig {
  std::size_t width = 16;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t classes = 5;
  std::size_t images_per_class = 2;
  double tolerance = 1e-5;
  double step = 1e-5;
  std::size_t encoder_entries = 8;  // strided entries per non-LayerNorm tensor
  // Negative control: scales the backward of this op (empty = off).
  std::string fault_op;
  double fault_factor = 1.5;

  nlohmann::json to_json() const;
  static AuditConfig from_json(const nlohmann::json& j);
};

struct AuditReport {
  AuditConfig config;
  std::vector<AuditCheck> checks;
  double max_rel_error = 0.0;

  bool passed() const;
  std::vector<std::string> failed_checks() const;  // unique names, first-failure order
  nlohmann::json to_json() const;
};

// Every primitive op on small random inputs, one check per op.
std::vector<AuditCheck> audit_ops(std::uint64_t seed, double tolerance, double step = 1e-5);

// Loss terms and the combined objective w.r.t. every LayerNorm parameter of
// both towers, plus both encoder paths, on a freshly initialised model.
std::vector<AuditCheck> audit_model(const AuditConfig& cfg, std::uint64_t seed);

AuditReport run_gradient_audit(const AuditConfig& cfg);

}  // namespace battta::bench

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "battta/tensor.hpp"

namespace battta {

// Central finite-difference comparison. `loss` rebuilds a scalar from the
// current values of `wrt`; entries are perturbed in place and restored.
//
// The error reported per tensor is ||analytic - numeric||_inf divided by
// max(||analytic||_inf, ||numeric||_inf); it is 0 when both gradients are
// below 1e-12 in magnitude.
// With `max_entries` > 0, only that many evenly strided entries of each
// larger tensor are perturbed and compared.
struct GradCheckResult {
  std::vector<double> rel_error;  // one per entry of `wrt`
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
};

GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::span<Tensor> wrt, double step = 1e-5,
                          std::size_t max_entries = 0);

// Same comparison for precomputed gradients.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

}  // namespace battta

#include "battta/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "battta/errors.hpp"

namespace battta {

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (scale < 1e-12) return 0.0;
  return diff / scale;
}

GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::span<Tensor> wrt, double step,
                          std::size_t max_entries) {
  for (auto& t : wrt) {
    if (!t.requires_grad()) throw ContractError("gradcheck: tensor does not require a gradient");
    t.zero_grad();
  }
  // A loss that does not depend on `wrt` has a zero analytic gradient.
  if (Tensor l = loss(); l.requires_grad()) l.backward();

  GradCheckResult result;
  for (auto& t : wrt) {
    std::vector<std::size_t> entries;
    const std::size_t n = t.size();
    if (max_entries == 0 || n <= max_entries) {
      for (std::size_t i = 0; i < n; ++i) entries.push_back(i);
    } else {
      for (std::size_t k = 0; k < max_entries; ++k) entries.push_back(k * n / max_entries);
    }
    std::vector<double> analytic(entries.size(), 0.0), numeric(entries.size());
    if (t.has_grad())
      for (std::size_t k = 0; k < entries.size(); ++k) analytic[k] = t.grad()[entries[k]];
    auto data = t.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const std::size_t i = entries[k];
      const double saved = data[i];
      data[i] = saved + step;
      const double up = loss().item();
      data[i] = saved - step;
      const double down = loss().item();
      data[i] = saved;
      numeric[k] = (up - down) / (2.0 * step);
    }
    result.entries_checked += entries.size();
    double err = relative_error(analytic, numeric);
    result.rel_error.push_back(err);
    result.max_rel_error = std::max(result.max_rel_error, err);
  }
  return result;
}

}  // namespace battta

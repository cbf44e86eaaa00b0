#include "battta/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "battta/errors.hpp"
#include "battta/ops.hpp"

namespace battta::tta {

LikelihoodMatrix likelihood(const Tensor& features, const Tensor& text_features, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive, got " + std::to_string(temperature));
  Tensor logits = ops::cosine_matrix(features, text_features);
  return {ops::softmax_rows(logits, temperature), logits, temperature};
}

PseudoLabels pseudo_label(const Tensor& probs) {
  if (probs.ndim() != 2) throw DimensionError("pseudo_label expects [B x C], got " + shape_str(probs.shape()));
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  PseudoLabels out;
  out.labels.reserve(b);
  for (std::size_t k = 0; k < b; ++k) {
    auto row = probs.data().subspan(k * c, c);
    // max_element returns the first maximum, which is the lowest index on ties.
    out.labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

PseudoLabels pseudo_label(const LikelihoodMatrix& lm) { return pseudo_label(lm.probs); }

Tensor PrototypeSet::present_rows() const {
  return ops::gather_rows(means, present);
}

PrototypeSet prototypes(const Tensor& features, const PseudoLabels& labels, std::size_t num_classes) {
  if (features.ndim() != 2 || features.dim(0) != labels.labels.size()) {
    throw DimensionError("prototypes: " + std::to_string(labels.labels.size()) + " labels for features " +
                         shape_str(features.shape()));
  }
  PrototypeSet set;
  set.num_classes = num_classes;
  set.counts.assign(num_classes, 0);
  for (std::size_t k = 0; k < labels.labels.size(); ++k) {
    const int y = labels.labels[k];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ContractError("pseudo-label " + std::to_string(y) + " at row " + std::to_string(k) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
    ++set.counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (set.counts[c] > 0) set.present.push_back(c);
  set.means = ops::segment_mean(features, labels.labels, num_classes);
  return set;
}

Tensor loss_pm(const PrototypeSet& protos, const Tensor& text_features, PmDivisor divisor) {
  if (text_features.ndim() != 2 || text_features.dim(0) != protos.num_classes) {
    throw DimensionError("loss_pm: text features " + shape_str(text_features.shape()) + " for " +
                         std::to_string(protos.num_classes) + " classes");
  }
  Tensor unit = ops::l2_normalize_rows(text_features);
  Tensor total = ops::sum(ops::sum_rows(ops::mul(protos.means, unit)));
  const std::size_t n = divisor == PmDivisor::all_classes ? protos.num_classes : protos.present.size();
  return ops::scale(total, n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
}

Tensor loss_sp(const PrototypeSet& protos) {
  const std::size_t k = protos.present.size();
  if (k < 2) return Tensor::scalar(0.0);
  const std::size_t d = protos.means.dim(1);
  for (std::size_t c : protos.present) {
    auto row = protos.means.data().subspan(c * d, d);
    if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; })) {
      throw DegenerateInputError("zero-norm prototype for class " + std::to_string(c));
    }
  }
  Tensor cos = ops::cosine_matrix(protos.present_rows(), protos.present_rows());
  std::vector<double> off(k * k, 1.0);
  for (std::size_t i = 0; i < k; ++i) off[i * k + i] = 0.0;
  return ops::sum(ops::mul(ops::add_scalar(ops::scale(cos, -1.0), 1.0), Tensor({k, k}, std::move(off))));
}

Tensor loss_ent(const LikelihoodMatrix& lm) { return ops::mean(ops::entropy_rows(lm.probs)); }

void ObjectiveWeights::validate() const {
  if (!(lambda_pm >= 0.0) || !(lambda_sp >= 0.0)) {
    throw ConfigError("loss weights must be non-negative (lambda_pm=" + std::to_string(lambda_pm) +
                      ", lambda_sp=" + std::to_string(lambda_sp) + ")");
  }
}

ObjectiveTerms objective_terms(const LikelihoodMatrix& lm, const PrototypeSet& protos, const Tensor& text_features,
                               const ObjectiveWeights& w) {
  w.validate();
  ObjectiveTerms t;
  t.ent = loss_ent(lm);
  t.pm = w.lambda_pm > 0.0 ? loss_pm(protos, text_features, w.pm_divisor) : Tensor::scalar(0.0);
  t.sp = w.lambda_sp > 0.0 ? loss_sp(protos) : Tensor::scalar(0.0);
  t.total = t.ent;
  if (w.lambda_pm > 0.0) t.total = ops::sub(t.total, ops::scale(t.pm, w.lambda_pm));
  if (w.lambda_sp > 0.0) t.total = ops::sub(t.total, ops::scale(t.sp, w.lambda_sp));
  return t;
}

Tensor objective(const LikelihoodMatrix& lm, const PrototypeSet& protos, const Tensor& text_features,
                 const ObjectiveWeights& w) {
  return objective_terms(lm, protos, text_features, w).total;
}

}  // namespace battta::tta

#pragma once

#include <cstddef>
#include <vector>

#include "battta/tensor.hpp"

namespace battta::tta {

// Zero-shot class likelihoods for a batch.
struct LikelihoodMatrix {
  Tensor probs;   // [B x C], rows sum to 1
  Tensor logits;  // [B x C] cosine similarities, before the temperature
  double temperature = 1.0;

  std::size_t batch() const { return probs.dim(0); }
  std::size_t classes() const { return probs.dim(1); }
};

// softmax_c(cos(v_k, z_c) / tau). Throws ParameterError for tau <= 0 and
// DegenerateInputError naming the row for a zero-norm feature.
LikelihoodMatrix likelihood(const Tensor& features, const Tensor& text_features, double temperature);

// Per-row argmax of the probabilities, ties to the lowest class. Plain ints,
// so nothing downstream can differentiate through the selection.
struct PseudoLabels {
  std::vector<int> labels;
};

PseudoLabels pseudo_label(const LikelihoodMatrix& lm);
PseudoLabels pseudo_label(const Tensor& probs);

struct PrototypeSet {
  std::size_t num_classes = 0;
  std::vector<std::size_t> counts;   // support count per class, 0 when absent
  std::vector<std::size_t> present;  // ascending class indices with count >= 1
  Tensor means;                      // [C x d]; absent rows are zero

  bool is_present(std::size_t c) const { return c < counts.size() && counts[c] > 0; }
  // Differentiable [present x d] rows in `present` order.
  Tensor present_rows() const;
};

// Mean feature per pseudo-labelled class. Gradients reach the features; the
// label indicator is constant. Throws ContractError for a label outside [0, C).
PrototypeSet prototypes(const Tensor& features, const PseudoLabels& labels, std::size_t num_classes);

enum class PmDivisor { all_classes, present_classes };

// (1/C) sum_c <proto_c, z_c / |z_c|>. Absent classes add nothing; the divisor
// is C unless `divisor` asks for the present-class mean.
Tensor loss_pm(const PrototypeSet& protos, const Tensor& text_features, PmDivisor divisor = PmDivisor::all_classes);

// sum over ordered pairs (l != c) of present classes of 1 - cos(proto_c, proto_l).
// Zero with fewer than two present classes.
Tensor loss_sp(const PrototypeSet& protos);

// Batch mean of the row entropies.
Tensor loss_ent(const LikelihoodMatrix& lm);

struct ObjectiveWeights {
  double lambda_pm = 1.0;
  double lambda_sp = 1.0;
  PmDivisor pm_divisor = PmDivisor::all_classes;

  void validate() const;
};

struct ObjectiveTerms {
  Tensor total;
  Tensor ent;
  Tensor pm;
  Tensor sp;
};

// L_ent - lambda_pm * L_pm - lambda_sp * L_sp, with the individual terms.
// The projection and separability terms are skipped (and reported as 0)
// when their weight is zero.
ObjectiveTerms objective_terms(const LikelihoodMatrix& lm, const PrototypeSet& protos, const Tensor& text_features,
                               const ObjectiveWeights& w);
Tensor objective(const LikelihoodMatrix& lm, const PrototypeSet& protos, const Tensor& text_features,
                 const ObjectiveWeights& w = {});

}  // namespace battta::tta

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "battta/datasets.hpp"
#include "battta/errors.hpp"
#include "battta/gradcheck.hpp"
#include "battta/losses.hpp"
#include "battta/model.hpp"
#include "battta/ops.hpp"
#include "battta/pretrain.hpp"
#include "test_util.hpp"

namespace battta::tta {
namespace {

using testing::el;
using testing::random_tensor;

using Rows = std::vector<std::vector<double>>;

Tensor matrix(const Rows& rows, bool requires_grad = false) {
  std::vector<double> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return Tensor({rows.size(), rows.front().size()}, std::move(data), requires_grad);
}

PrototypeSet protos_from_rows(const Rows& rows) {
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = static_cast<int>(i);
  return prototypes(matrix(rows), {labels}, rows.size());
}

// Brute-force group-by mean over a plain row-major buffer.
std::map<int, std::vector<double>> oracle_means(const std::vector<double>& x, std::size_t d,
                                                const std::vector<int>& labels) {
  std::map<int, std::vector<double>> sums;
  std::map<int, int> counts;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    auto& s = sums[labels[k]];
    s.resize(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) s[j] += x[k * d + j];
    ++counts[labels[k]];
  }
  for (auto& [c, s] : sums)
    for (double& v : s) v /= counts[c];
  return sums;
}

double oracle_sp(const std::map<int, std::vector<double>>& protos) {
  double total = 0.0;
  for (const auto& [l, a] : protos)
    for (const auto& [c, b] : protos) {
      if (l == c) continue;
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) {
        dot += a[j] * b[j];
        na += a[j] * a[j];
        nb += b[j] * b[j];
      }
      total += 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
    }
  return total;
}

TEST(Likelihood, ClosedFormWithOrthogonalText) {
  const Tensor text = matrix({{1, 0}, {0, 1}});
  const Tensor feats = matrix({{1, 0}, {1, 0}, {1, 0}});
  const auto lm = likelihood(feats, text, 1.0);
  const double e = std::numbers::e;
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(el(lm.probs, k, 0), e / (e + 1), 1e-15);
    EXPECT_NEAR(el(lm.probs, k, 1), 1 / (e + 1), 1e-15);
  }
}

TEST(Likelihood, IdenticalTextFeaturesGiveUniformRows) {
  std::mt19937_64 rng(1);
  const Tensor feats = random_tensor({6, 4}, rng, false);
  const Tensor text = matrix({{0.3, -1, 2, 0.5}, {0.3, -1, 2, 0.5}, {0.3, -1, 2, 0.5}});
  const auto lm = likelihood(feats, text, 0.05);
  for (double p : lm.probs.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
}

TEST(Likelihood, RowsAreDistributionsAndLogitsAreCosines) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto lm = likelihood(random_tensor({8, 5}, rng, false), random_tensor({4, 5}, rng, false), 0.01 + trial * 0.1);
    for (std::size_t k = 0; k < 8; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        s += el(lm.probs, k, c);
        EXPECT_GE(el(lm.logits, k, c), -1.0);
        EXPECT_LE(el(lm.logits, k, c), 1.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Likelihood, ArgmaxInvariantUnderTemperature) {
  std::mt19937_64 rng(3);
  const Tensor f = random_tensor({30, 6}, rng, false), z = random_tensor({7, 6}, rng, false);
  const auto a = pseudo_label(likelihood(f, z, 0.01)).labels;
  for (double tau : {0.1, 1.0, 10.0}) EXPECT_EQ(pseudo_label(likelihood(f, z, tau)).labels, a);
}

TEST(Likelihood, Errors) {
  const Tensor text = matrix({{1, 0}, {0, 1}});
  EXPECT_THROW(likelihood(matrix({{1, 0}}), text, 0.0), ParameterError);
  EXPECT_THROW(likelihood(matrix({{1, 0}}), text, -1.0), ParameterError);
  try {
    likelihood(matrix({{1, 0}, {0, 0}}), text, 1.0);
    FAIL() << "expected DegenerateInputError";
  } catch (const DegenerateInputError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(PseudoLabel, ArgmaxAndTieBreak) {
  EXPECT_EQ(pseudo_label(matrix({{0.1, 0.7, 0.2}})).labels, std::vector<int>{1});
  EXPECT_EQ(pseudo_label(matrix({{0.5, 0.5}})).labels, std::vector<int>{0});
  EXPECT_EQ(pseudo_label(matrix({{0.2, 0.4, 0.4}})).labels, std::vector<int>{1});
}

TEST(PseudoLabel, CarryNoGradient) {
  std::mt19937_64 rng(4);
  Tensor f = random_tensor({5, 3}, rng);
  const Tensor z = random_tensor({4, 3}, rng, false);
  const auto labels = pseudo_label(likelihood(f, z, 0.1));
  // A loss that uses only the labels as constants leaves f without gradient.
  const auto protos = prototypes(f.detach(), labels, 4);
  EXPECT_FALSE(protos.means.requires_grad());
}

TEST(Prototypes, DirectMean) {
  const Tensor f = matrix({{1, 2}, {3, 4}, {5, 7}});
  const auto p = prototypes(f, {{0, 0, 1}}, 3);
  EXPECT_EQ(p.present, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(p.counts, (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(el(p.means, 0, 0), 2.0);
  EXPECT_EQ(el(p.means, 0, 1), 3.0);
  EXPECT_EQ(el(p.means, 1, 0), 5.0);
  EXPECT_EQ(el(p.means, 1, 1), 7.0);
  EXPECT_FALSE(p.is_present(2));
  EXPECT_THROW(prototypes(f, {{0, 3, 1}}, 3), ContractError);
}

TEST(Prototypes, MatchGroupByOracleOnRandomBatches) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 64, c = 2 + rng() % 9, d = 1 + rng() % 8;
    const Tensor f = random_tensor({b, d}, rng, false);
    std::vector<int> labels(b);
    // Restrict to a subset of classes so some are absent.
    const std::size_t used = 1 + rng() % c;
    for (auto& l : labels) l = static_cast<int>(rng() % used);
    const auto p = prototypes(f, {labels}, c);
    const std::vector<double> x(f.data().begin(), f.data().end());
    const auto oracle = oracle_means(x, d, labels);
    ASSERT_EQ(p.present.size(), oracle.size());
    for (std::size_t cls = 0; cls < c; ++cls) {
      const auto it = oracle.find(static_cast<int>(cls));
      EXPECT_EQ(p.is_present(cls), it != oracle.end());
      if (it == oracle.end()) continue;
      for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(el(p.means, cls, j), it->second[j], 1e-12);
    }
  }
}

TEST(LossPm, ClosedForms) {
  const Tensor text = matrix({{3, 0}, {0, 0.5}});
  EXPECT_NEAR(loss_pm(protos_from_rows({{1, 0}, {0, 1}}), text).item(), 1.0, 1e-15);
  EXPECT_NEAR(loss_pm(protos_from_rows({{0, 1}, {1, 0}}), text).item(), 0.0, 1e-15);
  EXPECT_NEAR(loss_pm(protos_from_rows({{2, 0}, {0, 2}}), text).item(), 2.0, 1e-15);
}

TEST(LossPm, AbsentClassesAndDivisorSwitch) {
  const Tensor f = matrix({{1, 0, 0}, {0, 1, 0}});
  const auto p = prototypes(f, {{0, 1}}, 4);
  const Tensor text = matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}});
  EXPECT_NEAR(loss_pm(p, text).item(), 2.0 / 4.0, 1e-15);
  EXPECT_NEAR(loss_pm(p, text, PmDivisor::present_classes).item(), 1.0, 1e-15);
  EXPECT_THROW(loss_pm(p, matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 0}, {1, 1, 1}})), DegenerateInputError);
}

TEST(LossPm, ScalingBehaviour) {
  std::mt19937_64 rng(6);
  const Tensor f = random_tensor({12, 5}, rng, false), z = random_tensor({4, 5}, rng, false);
  std::vector<int> labels(12);
  for (std::size_t i = 0; i < 12; ++i) labels[i] = static_cast<int>(i % 4);
  const auto p = prototypes(f, {labels}, 4);
  const double base = loss_pm(p, z).item();
  EXPECT_NEAR(loss_pm(p, ops::scale(z, 3.7)).item(), base, 1e-12);
  const auto p2 = prototypes(ops::scale(f, 2.0), {labels}, 4);
  EXPECT_NEAR(loss_pm(p2, z).item(), 2.0 * base, 1e-12);
  EXPECT_GT(std::abs(loss_pm(p2, z).item() - base), 1e-6);
}

TEST(LossSp, ClosedForms) {
  EXPECT_NEAR(loss_sp(protos_from_rows({{1, 0, 0}, {0, 2, 0}, {0, 0, 3}})).item(), 6.0, 1e-15);
  EXPECT_NEAR(loss_sp(protos_from_rows({{1, 2}, {1, 2}, {1, 2}})).item(), 0.0, 1e-15);
  EXPECT_EQ(loss_sp(prototypes(matrix({{1, 2}}), {{1}}, 3)).item(), 0.0);
}

TEST(LossSp, MatchesOrderedPairOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + rng() % 63, c = 2 + rng() % 9, d = 2 + rng() % 6;
    const Tensor f = random_tensor({b, d}, rng, false);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng() % c);
    const std::vector<double> x(f.data().begin(), f.data().end());
    EXPECT_NEAR(loss_sp(prototypes(f, {labels}, c)).item(), oracle_sp(oracle_means(x, d, labels)), 1e-12);
  }
}

TEST(LossSp, RelabelingAndScalingInvariance) {
  const Rows rows{{1, 0.2, -0.3}, {0.1, 1, 0.4}, {-0.5, 0.3, 1}, {0.7, 0.7, 0.1}};
  const double base = loss_sp(protos_from_rows(rows)).item();
  EXPECT_NEAR(loss_sp(protos_from_rows({rows[2], rows[0], rows[3], rows[1]})).item(), base, 1e-12);
  Rows scaled = rows;
  for (std::size_t i = 0; i < scaled.size(); ++i)
    for (double& v : scaled[i]) v *= 0.5 + static_cast<double>(i);
  EXPECT_NEAR(loss_sp(protos_from_rows(scaled)).item(), base, 1e-12);
  EXPECT_THROW(loss_sp(protos_from_rows({{1, 0}, {0, 0}})), DegenerateInputError);
}

TEST(LossEnt, ClosedForms) {
  LikelihoodMatrix uniform{Tensor::full({3, 10}, 0.1), Tensor({3, 10}), 1.0};
  EXPECT_NEAR(loss_ent(uniform).item(), std::log(10.0), 1e-9);
  LikelihoodMatrix onehot{matrix({{1, 0, 0}, {0, 0, 1}}), Tensor({2, 3}), 1.0};
  EXPECT_EQ(loss_ent(onehot).item(), 0.0);
  LikelihoodMatrix r{matrix({{0.75, 0.25}}), Tensor({1, 2}), 1.0};
  EXPECT_NEAR(loss_ent(r).item(), 0.562335, 1e-6);
}

TEST(LossEnt, BoundedByLogC) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + rng() % 9;
    const auto lm = likelihood(random_tensor({16, 4}, rng, false), random_tensor({c, 4}, rng, false), 0.05);
    const double h = loss_ent(lm).item();
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(c)) + 1e-12);
  }
}

TEST(Objective, Reductions) {
  std::mt19937_64 rng(9);
  const Tensor f = random_tensor({10, 4}, rng, false), z = random_tensor({3, 4}, rng, false);
  const auto lm = likelihood(f, z, 0.1);
  const auto p = prototypes(f, pseudo_label(lm), 3);
  EXPECT_EQ(objective(lm, p, z, {0.0, 0.0}).item(), loss_ent(lm).item());
  const double full = loss_ent(lm).item() - loss_pm(p, z).item() - loss_sp(p).item();
  EXPECT_NEAR(objective(lm, p, z).item(), full, 1e-14);
  EXPECT_THROW(objective(lm, p, z, {-1.0, 0.0}), ConfigError);
}

TEST(Objective, ComposedClosedForm) {
  // Uniform probabilities, prototypes parallel to unit text rows (L_pm = 1)
  // and all identical (L_sp = 0) need C = 10 classes sharing one text row.
  const std::size_t c = 10;
  LikelihoodMatrix lm{Tensor::full({c, c}, 0.1), Tensor({c, c}), 1.0};
  const Tensor text = Tensor::full({c, 3}, 1.0 / std::sqrt(3.0));
  std::vector<int> labels(c);
  for (std::size_t i = 0; i < c; ++i) labels[i] = static_cast<int>(i);
  const auto p = prototypes(Tensor::full({c, 3}, 1.0 / std::sqrt(3.0)), {labels}, c);
  EXPECT_NEAR(objective(lm, p, text).item(), std::log(10.0) - 1.0, 1e-12);
}

TEST(Objective, GradientReachesBothTowers) {
  const auto set = gen_shapes(3, 4, 16, 3);
  const auto vocab = clip::Vocabulary::build(clip::pretrain_templates(), set.class_names);
  clip::DualEncoder m(clip::default_arch(vocab, 16), 2);
  const auto scope = clip::ParamScope::resolve(clip::ScopeSelector::ln_both, m);
  m.set_trainable(scope.resolved_names);
  const clip::PromptTemplate prompt{clip::kDefaultTemplate, set.class_names};
  const Tensor text = m.encode_text(prompt), feats = m.encode_image(set.images);
  const auto lm = likelihood(feats, text, m.temperature());
  objective(lm, prototypes(feats, pseudo_label(lm), 4), text).backward();
  double gv = 0.0, gt = 0.0;
  for (const auto& p : m.parameters()) {
    if (!p.value.requires_grad()) continue;
    for (double g : p.value.grad()) (p.tower == clip::Tower::text ? gt : gv) += g * g;
  }
  EXPECT_GT(gv, 0.0);
  EXPECT_GT(gt, 0.0);
}

TEST(Objective, LayerNormGradientsMatchFiniteDifferences) {
  const auto set = gen_shapes(2, 5, 16, 4);
  const auto vocab = clip::Vocabulary::build(clip::pretrain_templates(), set.class_names);
  clip::DualEncoder m(clip::default_arch(vocab, 16), 6);
  const auto scope = clip::ParamScope::resolve(clip::ScopeSelector::ln_both, m);
  m.set_trainable(scope.resolved_names);
  std::vector<Tensor> wrt;
  for (const auto& n : scope.resolved_names) wrt.push_back(m.param(n).value);
  const clip::PromptTemplate prompt{clip::kDefaultTemplate, set.class_names};
  PseudoLabels labels;
  {
    NoGradGuard g;
    labels = pseudo_label(likelihood(m.encode_image(set.images), m.encode_text(prompt), m.temperature()));
  }
  const auto r = gradcheck(
      [&] {
        const Tensor text = m.encode_text(prompt), feats = m.encode_image(set.images);
        return objective(likelihood(feats, text, m.temperature()), prototypes(feats, labels, 5), text);
      },
      wrt);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

}  // namespace
}  // namespace battta::tta

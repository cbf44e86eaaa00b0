#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "battta/errors.hpp"
#include "battta/gradcheck.hpp"
#include "battta/ops.hpp"
#include "test_util.hpp"

namespace battta {
namespace {

using testing::random_tensor;

// Weighted sum keeps every output entry in the loss with a distinct weight,
// so per-entry gradient errors cannot cancel.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng, false);
  return ops::sum(ops::mul(y, w));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor c = ops::matmul(eye, m);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, OrthogonalVectorsGiveZero) {
  Tensor c = ops::matmul(Tensor({1, 2}, {1, 0}), Tensor({2, 1}, {0, 1}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.item(), 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  std::vector<Tensor> wrt{a, b};
  auto r = gradcheck([&] { return probe(ops::matmul(a, b)); }, wrt);
  EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(LayerNorm, ConstantRowMapsToBeta) {
  Tensor y = ops::layer_norm(Tensor({1, 3}, {5, 5, 5}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, HandComputedRow) {
  // mean 0, variance 1 -> xhat = [1, -1]
  Tensor y = ops::layer_norm(Tensor({1, 2}, {1, -1}), Tensor::full({2}, 2.0), Tensor::full({2}, 1.0), 1e-14);
  EXPECT_NEAR(y.at(0), 3.0, 1e-12);
  EXPECT_NEAR(y.at(1), -1.0, 1e-12);
}

TEST(LayerNorm, AffineGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({4, 8}, rng, false);
  Tensor g = random_tensor({8}, rng, true, 0.5, 1.5), b = random_tensor({8}, rng);
  std::vector<Tensor> wrt{g, b};
  auto r = gradcheck([&] { return probe(ops::layer_norm(x, g, b)); }, wrt);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(LayerNorm, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 3, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  std::vector<Tensor> wrt{x};
  EXPECT_LT(gradcheck([&] { return probe(ops::layer_norm(x, g, b)); }, wrt).max_rel_error, 1e-6);
}

TEST(LayerNorm, NonPositiveEpsRejected) {
  EXPECT_THROW(ops::layer_norm(Tensor({1, 2}), Tensor({2}), Tensor({2}), 0.0), ParameterError);
}

TEST(Softmax, ConstantInputIsUniform) {
  for (double t : {0.01, 1.0, 7.5}) {
    Tensor y = ops::softmax(Tensor::full({4}, 3.25), t);
    for (double v : y.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  }
}

TEST(Softmax, ClosedFormTwoWay) {
  Tensor y = ops::softmax(Tensor({2}, {std::numbers::ln2, 0.0}), 1.0);
  EXPECT_NEAR(y.at(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y.at(1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ArgmaxIndependentOfTemperature) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({7}, rng, false, -3, 3);
    auto argmax = [](const Tensor& t) {
      return std::max_element(t.data().begin(), t.data().end()) - t.data().begin();
    };
    auto ref = argmax(x);
    for (double t : {0.01, 0.3, 1.0, 50.0}) EXPECT_EQ(argmax(ops::softmax(x, t)), ref);
  }
}

TEST(Softmax, OutputIsProbabilityVector) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor y = ops::softmax(random_tensor({10}, rng, false, -50, 50), 0.07);
    double s = 0.0;
    for (double v : y.data()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, NonPositiveTemperatureRejected) {
  EXPECT_THROW(ops::softmax(Tensor({2}), 0.0), ParameterError);
  EXPECT_THROW(ops::softmax(Tensor({2}), -1.0), ParameterError);
  EXPECT_THROW(ops::softmax_rows(Tensor({1, 2}), 0.0), ParameterError);
}

TEST(CosineSim, SelfSimilarityIsOne) {
  std::mt19937_64 rng(6);
  Tensor v = random_tensor({5}, rng, false);
  EXPECT_NEAR(ops::cosine_sim(v, v).item(), 1.0, 1e-15);
}

TEST(CosineSim, OrthogonalIsZero) {
  EXPECT_EQ(ops::cosine_sim(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})).item(), 0.0);
}

TEST(CosineSim, ScaleInvariant) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor v = random_tensor({6}, rng, false), z = random_tensor({6}, rng, false);
    double base = ops::cosine_sim(v, z).item();
    EXPECT_NEAR(ops::cosine_sim(ops::scale(v, 3.0), z).item(), base, 1e-12);
    EXPECT_NEAR(ops::cosine_sim(v, ops::scale(z, 0.01)).item(), base, 1e-12);
  }
}

TEST(CosineSim, ZeroNormRejected) {
  EXPECT_THROW(ops::cosine_sim(Tensor({3}), Tensor({3}, {1, 2, 3})), DegenerateInputError);
}

TEST(CosineSim, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  Tensor v = random_tensor({5}, rng), z = random_tensor({5}, rng);
  std::vector<Tensor> wrt{v, z};
  EXPECT_LT(gradcheck([&] { return ops::cosine_sim(v, z); }, wrt).max_rel_error, 1e-6);
}

TEST(GradCheck, LossIndependentOfInputsHasZeroError) {
  std::mt19937_64 rng(9);
  Tensor v = random_tensor({4}, rng);
  std::vector<Tensor> wrt{v};
  const auto r = gradcheck([] { return Tensor::scalar(3.0); }, wrt);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.entries_checked, 4u);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::full({2, 3, 2}, 0.5, true);
  ops::sum(x).backward();
  ASSERT_TRUE(x.has_grad());
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, DetachedPathCarriesNoGradient) {
  Tensor x({3}, {1, 2, 3}, true);
  Tensor y({3}, {4, 5, 6}, true);
  // Only the detached copy of y enters the loss.
  ops::sum(ops::mul(x, y.detach())).backward();
  EXPECT_FALSE(y.has_grad());
  EXPECT_EQ(x.grad()[2], 6.0);
}

TEST(Backward, NonScalarRejected) {
  Tensor x = Tensor::full({2}, 1.0, true);
  EXPECT_THROW(ops::scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, SecondInvocationRejected) {
  Tensor x = Tensor::full({2}, 1.0, true);
  Tensor loss = ops::sum(ops::scale(x, 2.0));
  loss.backward();
  EXPECT_THROW(loss.backward(), ContractError);
  // A rebuilt forward pass is accepted again.
  x.zero_grad();
  ops::sum(ops::scale(x, 2.0)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, ReachableIntermediatesGetGradients) {
  Tensor x({2}, {1, 2}, true);
  Tensor h = ops::scale(x, 3.0);
  ops::sum(ops::mul(h, h)).backward();
  ASSERT_TRUE(h.has_grad());
  EXPECT_EQ(h.grad()[1], 12.0);
  EXPECT_EQ(x.grad()[1], 36.0);
}

TEST(NoGrad, GuardSuppressesRecording) {
  Tensor x = Tensor::full({2}, 1.0, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(ops::scale(x, 2.0).requires_grad());
  }
  EXPECT_TRUE(ops::scale(x, 2.0).requires_grad());
}

// Every differentiable op against central differences on random inputs.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  Tensor bias = random_tensor({4}, rng), s = random_tensor({1}, rng, true, 0.5, 2.0);
  Tensor pos = random_tensor({3, 4}, rng, true, 0.05, 1.0);
  Tensor qkv = random_tensor({2 * 3, 12}, rng);
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  const std::vector<int> groups{1, -1, 1};

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> wrt;
  };
  std::vector<Case> cases{
      {"transpose", [&] { return probe(ops::transpose(a)); }, {a}},
      {"add", [&] { return probe(ops::add(a, b)); }, {a, b}},
      {"sub", [&] { return probe(ops::sub(a, b)); }, {a, b}},
      {"mul", [&] { return probe(ops::mul(a, b)); }, {a, b}},
      {"add_bias", [&] { return probe(ops::add_bias(a, bias)); }, {a, bias}},
      {"mul_scalar", [&] { return probe(ops::mul_scalar(a, s)); }, {a, s}},
      {"exp", [&] { return probe(ops::exp(a)); }, {a}},
      {"gelu", [&] { return probe(ops::gelu(ops::scale(a, 3.0))); }, {a}},
      {"mean", [&] { return ops::mean(ops::mul(a, b)); }, {a, b}},
      {"sum_rows", [&] { return probe(ops::sum_rows(a)); }, {a}},
      {"reshape", [&] { return probe(ops::reshape(a, {2, 6})); }, {a}},
      {"gather_rows", [&] { return probe(ops::gather_rows(a, idx)); }, {a}},
      {"segment_mean", [&] { return probe(ops::segment_mean(a, groups, 2)); }, {a}},
      {"softmax_rows", [&] { return probe(ops::softmax_rows(a, 0.3)); }, {a}},
      {"log_softmax_rows", [&] { return probe(ops::log_softmax_rows(a, 0.3)); }, {a}},
      {"entropy_rows", [&] { return probe(ops::entropy_rows(pos)); }, {pos}},
      {"l2_normalize_rows", [&] { return probe(ops::l2_normalize_rows(a)); }, {a}},
      {"cosine_matrix", [&] { return probe(ops::cosine_matrix(a, b)); }, {a, b}},
      {"self_attention", [&] { return probe(ops::self_attention(qkv, 2, 3, 2)); }, {qkv}},
  };
  for (auto& c : cases) {
    auto r = gradcheck(c.f, c.wrt);
    EXPECT_LT(r.max_rel_error, 1e-5) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(RandomInputs, OpGradients, ::testing::Range(0, 5));

TEST(Determinism, RepeatedEvaluationIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tensor x = random_tensor({4, 8}, rng), w = random_tensor({8, 6}, rng);
    Tensor g = random_tensor({8}, rng), b = random_tensor({8}, rng);
    Tensor qkv = ops::matmul(ops::layer_norm(x, g, b), w);
    Tensor y = ops::self_attention(qkv, 2, 2, 1);
    ops::sum(ops::mul(y, y)).backward();
    std::vector<double> out(y.data().begin(), y.data().end());
    for (const Tensor* t : {&x, &w, &g, &b}) out.insert(out.end(), t->grad().begin(), t->grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace battta

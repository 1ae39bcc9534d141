#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "hetsgd/dataset.hpp"
#include "hetsgd/nn_model.hpp"

using namespace hetsgd;

namespace {

double sampleStd(const Matrix& m) {
  double mean = 0, sq = 0;
  for (double x : m.values()) mean += x;
  mean /= static_cast<double>(m.size());
  for (double x : m.values()) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(m.size() - 1));
}

double lossOf(const Model& m, MatrixView x, std::span<const Label> y) { return crossEntropyLoss(forward(m, x), y); }

// Central differences on every weight; returns the worst relative error
// |a - n| / max(|a|, |n|, 1e-6). Below 1e-6 this becomes an absolute check at
// 1e-10, about ten times the roundoff floor eps * loss / h of the differences.
double worstRelativeError(Model model, const Matrix& x, const std::vector<Label>& y, double h = 1e-5) {
  const Gradient g = backward(model, forward(model, x), y);
  double worst = 0;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    for (std::size_t i = 0; i < model.weights[l].size(); ++i) {
      double& w = model.weights[l].values()[i];
      const double saved = w;
      w = saved + h;
      const double up = lossOf(model, x, y);
      w = saved - h;
      const double down = lossOf(model, x, y);
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.perLayer[l].values()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

Matrix randomInputs(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Matrix x(rows, cols);
  for (double& v : x.values()) v = n(rng);
  return x;
}

}  // namespace

TEST(Architecture, ParseAndValidate) {
  const Architecture a = Architecture::parse("54-512-2");
  EXPECT_EQ(a.layerSizes, (std::vector<std::size_t>{54, 512, 2}));
  EXPECT_EQ(a.toString(), "54-512-2");
  EXPECT_THROW(Architecture::parse("54"), InputError);
  EXPECT_THROW(Architecture::parse("54-0-2"), InputError);
  EXPECT_THROW(Architecture::parse("54-x-2"), InputError);
}

TEST(InitModel, DeterministicAndShaped) {
  const Architecture arch{{5, 4, 3}};
  const Model a = initModel(arch, 42);
  const Model b = initModel(arch, 42);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, initModel(arch, 43));
  ASSERT_EQ(a.weights.size(), 2u);
  EXPECT_EQ(a.weights[0].rows(), 4u);
  EXPECT_EQ(a.weights[0].cols(), 5u);
  EXPECT_EQ(a.weights[1].rows(), 3u);
  EXPECT_EQ(a.weights[1].cols(), 4u);
}

TEST(InitModel, ScaledGaussianStd) {
  const Model m = initModel(Architecture{{512, 256, 2}}, 7, InitScheme::ScaledGaussian);
  ASSERT_GE(m.weights[0].size(), 100000u);
  EXPECT_NEAR(sampleStd(m.weights[0]), 1.0 / std::sqrt(512.0), 0.1 * 0.04419);
}

TEST(InitModel, FanInStdEqualsFanIn) {
  const Model m = initModel(Architecture{{4, 30000, 2}}, 7, InitScheme::FanInStd);
  ASSERT_GE(m.weights[0].size(), 100000u);
  EXPECT_NEAR(sampleStd(m.weights[0]), 4.0, 0.4);
}

TEST(InitModel, SigmoidGainScalesHiddenLayersOnly) {
  const Model m = initModel(Architecture{{512, 256, 512}}, 7, InitScheme::SigmoidGain);
  EXPECT_NEAR(sampleStd(m.weights[0]), 4.0 / std::sqrt(512.0), 0.1 * 0.1768);
  EXPECT_NEAR(sampleStd(m.weights[1]), 1.0 / std::sqrt(256.0), 0.1 * 0.0625);
}

TEST(Forward, ZeroModelGivesUniformOutput) {
  const Model m = zeroModel(Architecture{{3, 4, 2}});
  const Matrix x(5, 3);
  const ActivationTape t = forward(m, x);
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_DOUBLE_EQ(t.probabilities()(r, 0), 0.5);
    EXPECT_DOUBLE_EQ(t.probabilities()(r, 1), 0.5);
  }
}

TEST(Forward, HandComposition232) {
  Model m = zeroModel(Architecture{{2, 3, 2}});
  m.weights[0] = Matrix{{0.1, -0.2}, {0.4, 0.3}, {-0.5, 0.6}};
  m.weights[1] = Matrix{{0.7, -0.1, 0.2}, {-0.3, 0.5, 0.9}};
  const double x0 = 1.5, x1 = -0.5;
  const Matrix x{{x0, x1}};

  // hidden = sigmoid(W1 x), out = softmax(W2 hidden), written out by hand.
  const double h[3] = {1 / (1 + std::exp(-(0.1 * x0 - 0.2 * x1))), 1 / (1 + std::exp(-(0.4 * x0 + 0.3 * x1))),
                       1 / (1 + std::exp(-(-0.5 * x0 + 0.6 * x1)))};
  const double z0 = 0.7 * h[0] - 0.1 * h[1] + 0.2 * h[2];
  const double z1 = -0.3 * h[0] + 0.5 * h[1] + 0.9 * h[2];
  const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));

  const ActivationTape t = forward(m, x);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(t.layer(1)(0, i), h[i], 1e-12);
  EXPECT_NEAR(t.probabilities()(0, 0), p0, 1e-12);
  EXPECT_NEAR(t.probabilities()(0, 1), 1 - p0, 1e-12);
}

TEST(Forward, OutputRowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Model m = initModel(Architecture{{6, 8, 8, 5}}, trial);
    Matrix x = randomInputs(9, 6, rng);
    for (double& v : x.values()) v *= 10;
    const ActivationTape t = forward(m, x);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) s += t.probabilities()(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Forward, WidthMismatchThrows) {
  const Model m = zeroModel(Architecture{{3, 2}});
  EXPECT_THROW(forward(m, Matrix(2, 4)), PreconditionError);
}

TEST(CrossEntropy, KnownValues) {
  const Model m = zeroModel(Architecture{{2, 2}});
  const Matrix x(2, 2);
  const std::vector<Label> y{0, 1};
  EXPECT_NEAR(crossEntropyLoss(forward(m, x), y), std::log(2.0), 1e-15);

  ActivationTape t{x.view(), {Matrix{{0.7, 0.3}}}};
  t.input = x.view().rowRange(0, 1);
  EXPECT_NEAR(crossEntropyLoss(t, std::vector<Label>{0}), 0.356675, 1e-6);

  ActivationTape perfect{x.view().rowRange(0, 1), {Matrix{{1.0, 0.0}}}};
  EXPECT_LE(crossEntropyLoss(perfect, std::vector<Label>{0}), 1e-9);
  // floored, never infinite
  EXPECT_NEAR(crossEntropyLoss(perfect, std::vector<Label>{1}), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, BadLabelsThrow) {
  const Model m = zeroModel(Architecture{{2, 2}});
  const Matrix x(2, 2);
  EXPECT_THROW(crossEntropyLoss(forward(m, x), std::vector<Label>{0, 2}), InputError);
  EXPECT_THROW(crossEntropyLoss(forward(m, x), std::vector<Label>{0}), PreconditionError);
}

TEST(Backward, FiniteDifferences543) {
  std::mt19937_64 rng(17);
  const Model m = initModel(Architecture{{5, 4, 3}}, 17);
  const Matrix x = randomInputs(7, 5, rng);
  const std::vector<Label> y{0, 1, 2, 0, 1, 2, 1};
  EXPECT_LE(worstRelativeError(m, x, y), 1e-4);
}

TEST(Backward, FiniteDifferencesRandomNets) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> width(1, 8), depth(1, 3), batch(1, 8);
  for (int seed = 0; seed < 50; ++seed) {
    Architecture arch;
    arch.layerSizes.push_back(width(rng));
    for (std::size_t d = depth(rng); d > 0; --d) arch.layerSizes.push_back(width(rng));
    arch.layerSizes.push_back(std::max<std::size_t>(2, width(rng)));
    const Model m = initModel(arch, seed);
    const std::size_t b = batch(rng);
    const Matrix x = randomInputs(b, arch.inputDim(), rng);
    std::vector<Label> y(b);
    for (auto& v : y) v = static_cast<Label>(rng() % arch.classCount());
    EXPECT_LE(worstRelativeError(m, x, y), 1e-4) << "seed " << seed << " arch " << arch.toString();
  }
}

TEST(Backward, ZeroWeightsBalancedBinaryAntisymmetric) {
  const Model m = zeroModel(Architecture{{2, 3, 2}});
  const Matrix x{{1.0, 2.0}, {-1.0, 0.5}, {0.3, -0.7}, {2.0, 1.0}};
  const std::vector<Label> y{0, 1, 1, 0};
  const Gradient g = backward(m, forward(m, x), y);
  const Matrix& out = g.perLayer[1];
  for (std::size_t c = 0; c < out.cols(); ++c) EXPECT_NEAR(out(0, c), -out(1, c), 1e-15);
}

TEST(Backward, DuplicatedBatchSameGradient) {
  std::mt19937_64 rng(5);
  const Model m = initModel(Architecture{{4, 6, 3}}, 5);
  const Matrix x = randomInputs(5, 4, rng);
  const std::vector<Label> y{0, 2, 1, 1, 0};
  Matrix xx(10, 4);
  std::vector<Label> yy;
  for (std::size_t r = 0; r < 5; ++r)
    for (int k = 0; k < 2; ++k) {
      for (std::size_t c = 0; c < 4; ++c) xx(yy.size(), c) = x(r, c);
      yy.push_back(y[r]);
    }
  const Gradient g1 = backward(m, forward(m, x), y);
  const Gradient g2 = backward(m, forward(m, xx), yy);
  for (std::size_t l = 0; l < g1.perLayer.size(); ++l)
    for (std::size_t i = 0; i < g1.perLayer[l].size(); ++i)
      EXPECT_NEAR(g1.perLayer[l].values()[i], g2.perLayer[l].values()[i], 1e-12);
}

TEST(ApplyUpdate, ZeroStepAndCancellation) {
  Model m = initModel(Architecture{{3, 4, 2}}, 1);
  const Model original = m;
  Gradient g{{m.weights[0], m.weights[1]}};
  applyUpdate(m, g, 0.0);
  EXPECT_EQ(m, original);

  const double eta = 0.25;  // power of two keeps g = model / eta exact
  for (auto& w : g.perLayer)
    for (double& v : w.values()) v /= eta;
  applyUpdate(m, g, eta);
  for (const auto& w : m.weights)
    for (double v : w.values()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyUpdate, NegatedGradientRestores) {
  std::mt19937_64 rng(8);
  Model m = initModel(Architecture{{3, 5, 2}}, 8);
  const Model original = m;
  const Matrix x = randomInputs(6, 3, rng);
  const std::vector<Label> y{0, 1, 0, 1, 1, 0};
  Gradient g = backward(m, forward(m, x), y);
  applyUpdate(m, g, 0.1);
  for (auto& w : g.perLayer)
    for (double& v : w.values()) v = -v;
  applyUpdate(m, g, 0.1);
  for (std::size_t l = 0; l < m.weights.size(); ++l)
    for (std::size_t i = 0; i < m.weights[l].size(); ++i)
      EXPECT_NEAR(m.weights[l].values()[i], original.weights[l].values()[i], 1e-12);
}

TEST(ApplyUpdate, ShapeMismatchThrows) {
  Model m = initModel(Architecture{{3, 2}}, 1);
  EXPECT_THROW(applyUpdate(m, Gradient{}, 0.1), PreconditionError);
  EXPECT_THROW(applyUpdate(m, Gradient{{Matrix(3, 2)}}, 0.1), PreconditionError);
}

TEST(ApplyUpdate, FullBatchStepDescends) {
  const Dataset ds = syntheticBlobs(200, 2, 2, 4.0, 3);
  Model m = initModel(Architecture{{2, 8, 2}}, 3);
  const double before = lossOf(m, ds.features, ds.labels);
  applyUpdate(m, backward(m, forward(m, ds.features), ds.labels), 1e-2);
  EXPECT_LT(lossOf(m, ds.features, ds.labels), before);
}

// Averaged over initializations: single draws carry a per-class logit offset
// (std ~0.55 through a width-8 sigmoid layer), which dominates for k = 2.
TEST(Loss, FreshModelNearLogK) {
  for (std::size_t k : {3u, 5u, 10u}) {
    double mean = 0;
    for (int seed = 0; seed < 50; ++seed) {
      const Dataset ds = syntheticBlobs(2000, 8, k, 1.0, seed);
      const Model m = initModel(Architecture{{8, 8, 8, k}}, 1000 + seed);
      mean += lossOf(m, ds.features, ds.labels) / 50;
    }
    EXPECT_NEAR(mean, std::log(static_cast<double>(k)), 0.1 * std::log(static_cast<double>(k))) << "k=" << k;
  }
}

TEST(DeepCopy, IsolationAndEquality) {
  Model m = initModel(Architecture{{3, 4, 2}}, 9);
  Model c = deepCopy(m);
  EXPECT_EQ(c, m);
  const Model before = m;
  c.weights[0](0, 0) += 1.0;
  EXPECT_EQ(m, before);
}

TEST(DeepCopy, NoTornScalarsUnderConcurrentUpdates) {
  // The writer only ever stores small integers; a torn double would be
  // a non-integer or out of range.
  Model m = zeroModel(Architecture{{64, 64, 2}});
  std::atomic<bool> done{false};
  std::thread writer([&] {
    double v = 0;
    while (!done.load()) {
      v = v >= 1000 ? 0 : v + 1;
      for (auto& w : m.weights)
        for (double& x : w.values()) storeShared(x, v);
    }
  });
  for (int i = 0; i < 200; ++i) {
    const Model c = deepCopy(m);
    for (const auto& w : c.weights)
      for (double x : w.values()) {
        ASSERT_EQ(x, std::floor(x));
        ASSERT_GE(x, 0);
        ASSERT_LE(x, 1000);
      }
  }
  done = true;
  writer.join();
}

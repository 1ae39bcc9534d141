#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hetsgd/linalg.hpp"

using namespace hetsgd;

namespace {

Matrix randomMatrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.values()) x = u(rng);
  return m;
}

// Reference product with explicit transposition, independent of gemm's loop nests.
Matrix naiveProduct(const Matrix& a, const Matrix& b, bool ta, bool tb) {
  auto at = [&](std::size_t i, std::size_t k) { return ta ? a(k, i) : a(i, k); };
  auto bt = [&](std::size_t k, std::size_t j) { return tb ? b(j, k) : b(k, j); };
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t inner = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  Matrix c(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < inner; ++k) s += static_cast<long double>(at(i, k)) * bt(k, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

double maxAbsDiff(const Matrix& a, const Matrix& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

}  // namespace

TEST(Gemm, IdentityLeavesOperandUnchanged) {
  std::mt19937_64 rng(1);
  const Matrix a = randomMatrix(3, 5, rng);
  const Matrix eye{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(gemm(eye, a), a);
}

TEST(Gemm, HandEvaluated) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5}, {6}};
  EXPECT_EQ(gemm(a, b), (Matrix{{17}, {39}}));
}

TEST(Gemm, MatchesNaiveOracle7x5x4) {
  std::mt19937_64 rng(7);
  const Matrix a = randomMatrix(7, 5, rng);
  const Matrix b = randomMatrix(5, 4, rng);
  EXPECT_LE(maxAbsDiff(gemm(a, b), naiveProduct(a, b, false, false)), 1e-12);
}

TEST(Gemm, RandomShapesAllTranspositions) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const bool ta = trial & 1, tb = trial & 2;
    const Matrix a = ta ? randomMatrix(k, m, rng) : randomMatrix(m, k, rng);
    const Matrix b = tb ? randomMatrix(n, k, rng) : randomMatrix(k, n, rng);
    const Matrix c = gemm(a, b, ta, tb);
    ASSERT_EQ(c.rows(), m);
    ASSERT_EQ(c.cols(), n);
    EXPECT_LE(maxAbsDiff(c, naiveProduct(a, b, ta, tb)), 1e-12) << "trial " << trial;
  }
}

TEST(Gemm, LayoutsAreBitIdentical) {
  std::mt19937_64 rng(3);
  const Matrix a = randomMatrix(6, 9, rng);
  const Matrix b = randomMatrix(9, 4, rng);
  Matrix bt(4, 9);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 4; ++j) bt(j, i) = b(i, j);
  EXPECT_EQ(gemm(a, b, false, false), gemm(a, bt, false, true));
  EXPECT_EQ(gemm(a, b), gemm<SharedAccess>(a, b));
}

TEST(Gemm, DimensionMismatchThrows) {
  EXPECT_THROW(gemm(Matrix(2, 3), Matrix(2, 3)), PreconditionError);
  EXPECT_NO_THROW(gemm(Matrix(2, 3), Matrix(2, 3), true, false));
}

TEST(Sigmoid, KnownValues) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  const double tiny = sigmoid(-100.0);
  EXPECT_GT(tiny, 0.0);
  EXPECT_LE(tiny, 1e-40);
  EXPECT_NEAR(sigmoid(Matrix{{1.0}})(0, 0), 0.7310585786, 1e-10);
  EXPECT_FALSE(std::isnan(sigmoid(-1000.0)));
  EXPECT_FALSE(std::isnan(sigmoid(1000.0)));
}

TEST(Sigmoid, OddSymmetry) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng);
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15);
  }
}

TEST(SigmoidDeriv, FromOutput) {
  const Matrix d = sigmoidDerivFromOutput(Matrix{{0.5, 0.0, 1.0, 0.7310585786}});
  EXPECT_DOUBLE_EQ(d(0, 0), 0.25);
  EXPECT_EQ(d(0, 1), 0.0);
  EXPECT_EQ(d(0, 2), 0.0);
  EXPECT_NEAR(d(0, 3), 0.1966119332, 1e-10);
}

TEST(Softmax, KnownValuesAndStability) {
  const Matrix s = softmaxRows(Matrix{{1, 2, 3}, {1000, 0, 0}, {4, 4, 4}});
  EXPECT_NEAR(s(0, 0), 0.09003057, 1e-8);
  EXPECT_NEAR(s(0, 1), 0.24472847, 1e-8);
  EXPECT_NEAR(s(0, 2), 0.66524096, 1e-8);
  EXPECT_NEAR(s(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(s(1, 1), 0.0, 1e-12);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(s(2, c), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix m = randomMatrix(3, 1 + trial % 12, rng);
    for (double& x : m.values()) x *= 20;
    const Matrix s = softmaxRows(m);
    Matrix shifted = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const double c = shift(rng);
      for (std::size_t j = 0; j < m.cols(); ++j) shifted(r, j) += c;
    }
    const Matrix s2 = softmaxRows(shifted);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double sum = 0;
      for (std::size_t j = 0; j < m.cols(); ++j) {
        sum += s(r, j);
        EXPECT_NEAR(s(r, j), s2(r, j), 1e-12);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Axpy, Cases) {
  std::mt19937_64 rng(2);
  const Matrix a = randomMatrix(4, 3, rng);
  Matrix t = a;
  axpyInPlace(t, randomMatrix(4, 3, rng), 0.0);
  EXPECT_EQ(t, a);
  axpyInPlace(t, a, -1.0);
  EXPECT_EQ(t, Matrix(4, 3));
  Matrix h{{1, 1}};
  axpyInPlace(h, Matrix{{2, 4}}, 0.5);
  EXPECT_EQ(h, (Matrix{{2, 3}}));
  EXPECT_THROW(axpyInPlace(h, Matrix(2, 1), 1.0), PreconditionError);
}

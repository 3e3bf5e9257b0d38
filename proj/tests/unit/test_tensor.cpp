#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "fff/tensor.hpp"
#include "reference.hpp"

namespace fff {
namespace {

using testing::matmul_ref;
using testing::random_matrix;

TEST(Matrix, ShapeAndRowAccess) {
  Matrix<float> m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0f);
  EXPECT_EQ(m.row(1)[0], 4.0f);
  EXPECT_THROW(Matrix<float>(2, 2, std::vector<float>(3)), DimensionError);
}

TEST(Matmul, IdentityTimesIdentity) {
  const Matrix<double> eye{{1, 0}, {0, 1}};
  EXPECT_EQ(matmul(eye, eye), eye);
}

TEST(Matmul, ZeroOperandAnnihilates) {
  const auto a = random_matrix<float>(3, 4, 1);
  const Matrix<float> zeros(5, 4);
  EXPECT_EQ(matmul(a, zeros), Matrix<float>(3, 5));
}

TEST(Matmul, HandComputedProducts) {
  const Matrix<double> a{{1, 2}, {3, 4}};
  const Matrix<double> b_t{{5, 6}, {7, 8}};
  const Matrix<double> expected{{17, 23}, {39, 53}};
  const auto oracle = matmul_ref(a, b_t);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(oracle[i][j], expected(i, j));
  EXPECT_EQ(matmul(a, b_t), expected);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Matrix<float>(2, 3), Matrix<float>(4, 5));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
    EXPECT_NE(msg.find("4x5"), std::string::npos);
  }
}

template <typename T>
void check_matmul_against_oracle(double tolerance) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = dim(rng), n = dim(rng), k = dim(rng);
    const auto a = random_matrix<T>(m, k, rng());
    const auto b = random_matrix<T>(n, k, rng());
    const auto got = matmul(a, b);
    const auto want = matmul_ref(a, b);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        // Scale by sum |a_ik b_jk|; a plain relative error is meaningless
        // when the dot product cancels to near zero.
        double mag = 0.0;
        for (std::size_t c = 0; c < k; ++c) mag += std::abs(double(a(i, c)) * double(b(j, c)));
        ASSERT_LE(std::abs(double(got(i, j)) - want[i][j]), tolerance * mag) << m << "x" << k << " * " << n;
      }
    }
  }
}

TEST(Matmul, AgreesWithTripleLoopOracleSingle) { check_matmul_against_oracle<float>(1e-6); }
TEST(Matmul, AgreesWithTripleLoopOracleDouble) { check_matmul_against_oracle<double>(1e-12); }

TEST(Matmul, TiledPathMatchesScalarDotBitwise) {
  const auto a = random_matrix<float>(19, 37, 5);
  const auto b = random_matrix<float>(11, 37, 6);
  const auto got = matmul(a, b);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) EXPECT_EQ(got(i, j), dot<float>(a.row(i), b.row(j)));
}

TEST(GatherRows, IdentityPermutationReturnsInput) {
  const auto m = random_matrix<float>(6, 3, 2);
  std::vector<std::size_t> idx(6);
  std::iota(idx.begin(), idx.end(), 0);
  EXPECT_EQ(gather_rows(m, idx), m);
}

TEST(GatherRows, DuplicatesRows) {
  const auto m = random_matrix<double>(3, 4, 3);
  const auto g = gather_rows(m, std::vector<std::size_t>{2, 2});
  ASSERT_EQ(g.rows(), 2u);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(g(0, c), m(2, c));
    EXPECT_EQ(g(1, c), m(2, c));
  }
}

TEST(GatherRows, SelectsRequestedRowsInOrder) {
  const auto m = random_matrix<float>(7, 3, 4);
  const std::vector<std::size_t> idx{4, 0, 6};
  const auto g = gather_rows(m, idx);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(g(i, c), m(idx[i], c));
}

TEST(GatherRows, OutOfRangeIndexReportsIt) {
  const auto m = random_matrix<float>(3, 2, 5);
  try {
    gather_rows(m, std::vector<std::size_t>{0, 17});
    FAIL() << "expected BoundsError";
  } catch (const BoundsError& e) {
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(GatherRows, InversePermutationRoundTrips) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    const auto m = random_matrix<float>(n, 5, rng());
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> inv(n);
    for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
    EXPECT_TRUE(bitwise_equal(gather_rows(gather_rows(m, perm), inv), m));
  }
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(10.0), 10.0, 1e-6);
  // x * Phi(x) evaluated at 30 digits.
  EXPECT_NEAR(gelu(1.0), 0.841344746068542948585, 1e-15);
  EXPECT_NEAR(gelu(-1.0), -0.158655253931457051415, 1e-15);
  EXPECT_NEAR(gelu(0.5), 0.345731230637006551819, 1e-15);
  EXPECT_NEAR(gelu(-3.0), -0.00404969409489028357996, 1e-16);
  EXPECT_NEAR(gelu(1.0f), 0.8413447f, 1e-7f);
}

TEST(Gelu, BoundedByReluAndHalfNegativePart) {
  for (double x = -8.0; x <= 8.0; x += 1.0 / 64) {
    const double g = gelu(x);
    EXPECT_LE(g, std::max(x, 0.0) + 1e-7) << x;
    EXPECT_GE(g, 0.5 * std::min(x, 0.0) - 1e-7) << x;
    if (x >= 0) EXPECT_GE(g, -1e-7) << x;
  }
}

TEST(Gelu, NonDecreasingRightOfItsMinimum) {
  // The minimum sits at x = -0.75179152469356...; GeLU decreases to its left.
  double prev = gelu(-0.7517915247);
  EXPECT_NEAR(prev, -0.169971207479903661694, 1e-12);
  for (double x = -0.75; x <= 8.0; x += 1.0 / 128) {
    const double g = gelu(x);
    EXPECT_GE(g, prev) << x;
    prev = g;
  }
  EXPECT_GT(gelu(-2.0), gelu(-1.0));
}

}  // namespace
}  // namespace fff

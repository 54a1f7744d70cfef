#include <cmath>

#include <gtest/gtest.h>

#include "softpos/loss.hpp"
#include "softpos/rng.hpp"

namespace softpos {
namespace {

using Mat = Matrix<double>;

Mat random_unit_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  m.rowwise().normalize();
  return m;
}

TEST(InfoNce, AllEqualEmbeddingsGiveLogB) {
  const Mat a = Mat::Ones(4, 3).rowwise().normalized();
  EXPECT_NEAR(infonce_loss(a, a, 0.1).loss, std::log(4.0), 1e-12);
}

TEST(InfoNce, TwoByTwoClosedForm) {
  Mat a(2, 2), v(2, 2);
  a << 1, 0, 0, 1;
  v << 1, 0, 0, 1;
  // S = [[1,0],[0,1]] at tau = 1: each term is log(1 + e^-1).
  EXPECT_NEAR(infonce_loss(a, v, 1.0).loss, std::log(1.0 + std::exp(-1.0)), 1e-9);
}

TEST(InfoNce, RejectsBadInputs) {
  const Mat a = Mat::Identity(2, 2);
  EXPECT_THROW(infonce_loss(a, a, 0.0), TemperatureNonPositive);
  EXPECT_THROW(infonce_loss(a, a, -1.0), TemperatureNonPositive);
  EXPECT_THROW(infonce_loss(a, Mat(Mat::Identity(3, 2)), 1.0), DimensionMismatch);
}

TEST(InfoNce, StableForLargeLogits) {
  const Mat a = Mat::Identity(3, 3);
  const auto r = infonce_loss(a, a, 1e-4);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(InfoNceGrad, MatchesCentralDifferences) {
  const double h = 1e-6, tau = 0.5;
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat a = random_unit_rows(rng, 5, 8);
    const Mat v = random_unit_rows(rng, 5, 8);
    const auto g = infonce_grad(infonce_loss(a, v, tau).similarity, a, v, tau);
    double worst = 0.0;
    auto check = [&](const Mat& analytic, bool wrt_a) {
      for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        Mat ap = a, am = a, vp = v, vm = v;
        (wrt_a ? ap : vp).data()[i] += h;
        (wrt_a ? am : vm).data()[i] -= h;
        const double num = (infonce_loss(ap, vp, tau).loss - infonce_loss(am, vm, tau).loss) / (2 * h);
        const double an = analytic.data()[i];
        worst = std::max(worst, std::fabs(an - num) / std::max({std::fabs(an), std::fabs(num), 1e-7}));
      }
    };
    check(g.a, true);
    check(g.v, false);
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(InfoNceGrad, VanishesWhenPerfectlySeparated) {
  const Mat a = Mat::Identity(4, 6);
  const double tau = 0.01;
  const auto g = infonce_grad(infonce_loss(a, a, tau).similarity, a, a, tau);
  EXPECT_LT(std::sqrt(g.a.squaredNorm() + g.v.squaredNorm()), 1e-3);
}

TEST(InfoNceGrad, SwappingModalitiesSwapsGradients) {
  Rng rng(8);
  const Mat a = random_unit_rows(rng, 6, 4);
  const Mat v = random_unit_rows(rng, 6, 4);
  const double tau = 0.2;
  const auto fwd = infonce_loss(a, v, tau);
  const auto rev = infonce_loss(v, a, tau);
  EXPECT_NEAR(fwd.loss, rev.loss, 1e-14);
  const auto gf = infonce_grad(fwd.similarity, a, v, tau);
  const auto gr = infonce_grad(rev.similarity, v, a, tau);
  EXPECT_LT((gf.a - gr.v).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((gf.v - gr.a).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InfoNceGrad, RowTermsIgnoreRowShift) {
  Rng rng(5);
  Mat s(4, 4);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
  Mat shifted = s;
  shifted.row(2).array() += 7.5;
  EXPECT_LT((row_terms(s) - row_terms(shifted)).cwiseAbs().maxCoeff(), 1e-12);
  Mat col_shifted = s;
  col_shifted.col(1).array() -= 3.0;
  EXPECT_LT((column_terms(s) - column_terms(col_shifted)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(InfoNceGrad, DiagonalPullsOffDiagonalPushes) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Mat s(5, 5);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = 3 * rng.normal();
    const Mat g = infonce_similarity_grad(s);
    for (Eigen::Index i = 0; i < 5; ++i)
      for (Eigen::Index j = 0; j < 5; ++j) {
        if (i == j)
          EXPECT_LE(g(i, j), 0.0);
        else
          EXPECT_GE(g(i, j), 0.0);
      }
    // Both softmax blocks carry total mass B, cancelled by -2I.
    EXPECT_NEAR(g.sum(), 0.0, 1e-12);
  }
}

}  // namespace
}  // namespace softpos

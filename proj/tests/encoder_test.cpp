#include <cmath>

#include <gtest/gtest.h>

#include "softpos/encoder.hpp"

namespace softpos {
namespace {

using Enc = MlpEncoder<double>;
using Mat = Matrix<double>;

Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

bool near_kink(const Enc::Tape& tape, double tol) {
  for (std::size_t l = 0; l + 1 < tape.pre.size(); ++l)
    if ((tape.pre[l].array().abs() < tol).any()) return true;
  return false;
}

double objective(const Enc& enc, const Mat& x, const Mat& g) { return enc.forward(x).output.cwiseProduct(g).sum(); }

// |a - n| / max(|a|, |n|), with the denominator floored at 1e-7 so that
// entries that are zero analytically are judged on absolute error.
double rel_err(double a, double n) { return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-7}); }

TEST(EncoderInit, DeterministicZeroBiasBoundedWeights) {
  const auto a = Enc::init({4, 4}, 17);
  const auto b = Enc::init({4, 4}, 17);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == Enc::init({4, 4}, 18));
  const auto enc = Enc::init({7, 5, 3}, 2);
  for (std::size_t l = 0; l < enc.num_layers(); ++l) {
    EXPECT_TRUE(enc.bias(l).isZero(0.0));
    const double bound = std::sqrt(6.0 / static_cast<double>(enc.dims()[l] + enc.dims()[l + 1]));
    EXPECT_LE(enc.weight(l).cwiseAbs().maxCoeff(), bound);
  }
  EXPECT_THROW(Enc::init({4}, 0), InvalidArgument);
}

TEST(EncoderForward, NormalisesThreeFourToUnit) {
  Enc enc({2, 2}, {Mat::Identity(2, 2), Mat::Zero(2, 1)});
  Mat x(1, 2);
  x << 3, 4;
  const auto y = enc.embed(x);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.8);
}

TEST(EncoderForward, ZeroOutputIsAnError) {
  Enc enc({2, 2}, {Mat::Identity(2, 2), Mat::Zero(2, 1)});
  EXPECT_THROW(enc.embed(Mat::Zero(1, 2)), ZeroNormEmbedding);
  EXPECT_THROW(enc.embed(Mat::Zero(1, 3)), DimensionMismatch);
}

TEST(EncoderForward, EmbeddingsAreUnitNorm) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto enc = Enc::init({9, 64, 5}, static_cast<std::uint64_t>(trial));
    const auto y = enc.embed(random_matrix(rng, 7, 9));
    for (Eigen::Index r = 0; r < y.rows(); ++r) EXPECT_NEAR(y.row(r).norm(), 1.0, 1e-6);
  }
}

TEST(EncoderBackward, MatchesCentralDifferences) {
  const double h = 1e-5;
  Rng rng(10);
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 10; ++seed) {
    auto enc = Enc::init({6, 5, 4}, seed);
    for (std::size_t l = 0; l < enc.num_layers(); ++l)
      enc.params()[2 * l + 1] = random_matrix(rng, enc.bias(l).rows(), 1) * 0.1;
    const Mat x = random_matrix(rng, 3, 6);
    const Mat g = random_matrix(rng, 3, 4);
    const auto tape = enc.forward(x);
    if (near_kink(tape, 1e-6)) continue;
    const auto grads = enc.backward(tape, g);
    double worst = 0.0;
    for (std::size_t t = 0; t < enc.params().size(); ++t)
      for (Eigen::Index i = 0; i < enc.params()[t].size(); ++i) {
        auto probe = enc;
        double& p = probe.params()[t].data()[i];
        const double orig = p;
        p = orig + h;
        const double up = objective(probe, x, g);
        p = orig - h;
        const double down = objective(probe, x, g);
        worst = std::max(worst, rel_err(grads.params[t].data()[i], (up - down) / (2 * h)));
      }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Mat xp = x, xm = x;
      xp.data()[i] += h;
      xm.data()[i] -= h;
      worst = std::max(worst, rel_err(grads.input.data()[i], (objective(enc, xp, g) - objective(enc, xm, g)) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-5) << "seed " << seed;
    ++checked;
  }
}

TEST(EncoderBackward, ZeroUpstreamGradientGivesZeroGrads) {
  Rng rng(1);
  const auto enc = Enc::init({5, 6, 3}, 3);
  const auto tape = enc.forward(random_matrix(rng, 4, 5));
  const auto grads = enc.backward(tape, Mat::Zero(4, 3));
  for (const auto& t : grads.params) EXPECT_TRUE(t.isZero(0.0));
}

TEST(EncoderBackward, NormalisationRemovesRadialComponent) {
  Rng rng(2);
  const auto enc = Enc::init({5, 6, 3}, 5);
  const Mat x = random_matrix(rng, 4, 5);
  const auto tape = enc.forward(x);
  // Upstream gradient along y^ itself: (I - y^ y^T) y^ = 0.
  const auto radial = enc.backward(tape, tape.output);
  for (const auto& t : radial.params) EXPECT_LT(t.cwiseAbs().maxCoeff(), 1e-12);

  // Directional derivative of y^ is orthogonal to y^ to first order.
  const double h = 1e-6;
  auto plus = enc, minus = enc;
  for (std::size_t t = 0; t < enc.params().size(); ++t) {
    const Mat delta = random_matrix(rng, enc.params()[t].rows(), enc.params()[t].cols());
    plus.params()[t] += h * delta;
    minus.params()[t] -= h * delta;
  }
  const Mat dy = (plus.embed(x) - minus.embed(x)) / (2 * h);
  for (Eigen::Index r = 0; r < x.rows(); ++r) EXPECT_NEAR(tape.output.row(r).dot(dy.row(r)), 0.0, 1e-8);
}

TEST(Gather, StacksRequestedRows) {
  std::vector<Sample> s(3);
  for (std::size_t i = 0; i < 3; ++i) s[i] = {i, 0, std::nullopt, {float(i), float(i) + 0.5f}, {float(10 * i)}};
  const Dataset ds(s, 1, 2, 1);
  const std::vector<std::size_t> ids{2, 0};
  const auto a = gather<double>(ds, ids, Modality::A);
  EXPECT_EQ(a(0, 0), 2.0);
  EXPECT_EQ(a(1, 1), 0.5);
  EXPECT_EQ(gather<double>(ds, ids, Modality::B)(0, 0), 20.0);
}

}  // namespace
}  // namespace softpos

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "nasmc/dataset.hpp"
#include "nasmc/errors.hpp"
#include "nasmc/models.hpp"

namespace nasmc {
namespace {

Vector v1(double a) { return Vector::Constant(1, a); }

TEST(NssmF, ClosedFormCases) {
  EXPECT_DOUBLE_EQ(BenchmarkNssm::f(1.0, 0), 21.0);
  EXPECT_DOUBLE_EQ(BenchmarkNssm::f(0.0, 7), 8.0 * std::cos(1.2 * 7));
  // 1 + 10 + 8cos(1.2), evaluated independently.
  EXPECT_NEAR(BenchmarkNssm::f(2.0, 1), 13.898862035813389, 1e-12);
}

TEST(NssmG, Values) {
  EXPECT_EQ(BenchmarkNssm::g(0.0), 0.0);
  EXPECT_DOUBLE_EQ(BenchmarkNssm::g(2.0), 0.2);
  EXPECT_DOUBLE_EQ(BenchmarkNssm::g(-2.0), 0.2);
}

TEST(Nssm, RejectsNonPositiveScales) {
  EXPECT_THROW(BenchmarkNssm(0.0, 1.0), InvalidArgument);
  EXPECT_THROW(BenchmarkNssm(1.0, -1.0), InvalidArgument);
  EXPECT_THROW(BenchmarkNssm(1.0, 1.0, 0.0), InvalidArgument);
}

TEST(Nssm, DensitiesUseStatedMoments) {
  const BenchmarkNssm m(std::sqrt(10.0), 1.0);
  const double z_prev = 0.7, z = 3.0, x = 0.1;
  const double mean = BenchmarkNssm::f(z_prev, 4);
  const double e = (z - mean) / std::sqrt(10.0);
  EXPECT_NEAR(m.log_trans(v1(z_prev), v1(z), 4),
              -0.5 * std::log(2 * M_PI * 10.0) - 0.5 * e * e, 1e-12);
  const double u = x - z * z / 20.0;
  EXPECT_NEAR(m.log_obs(v1(z), v1(x), 4), -0.5 * std::log(2 * M_PI) - 0.5 * u * u, 1e-12);
  EXPECT_NEAR(m.log_init(v1(0.0)), -0.5 * std::log(2 * M_PI * 5.0), 1e-12);
}

TEST(Nssm, TransitionIntegratesToOne) {
  const BenchmarkNssm m(std::sqrt(10.0), 1.0);
  const double center = BenchmarkNssm::f(0.0, 1);
  const double half = 8.0 * std::sqrt(10.0);
  const int n = 20000;
  const double h = 2.0 * half / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = center - half + i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * std::exp(m.log_trans(v1(0.0), v1(z), 1));
  }
  EXPECT_NEAR(acc * h, 1.0, 1e-6);
}

TEST(Nssm, MarkovStructure) {
  const BenchmarkNssm m(1.3, 0.8);
  // Only z_prev and t enter the transition, only z enters the observation.
  EXPECT_EQ(m.log_trans(v1(0.2), v1(1.0), 5), m.log_trans(v1(0.2), v1(1.0), 5));
  EXPECT_NE(m.log_trans(v1(0.2), v1(1.0), 5), m.log_trans(v1(0.2), v1(1.0), 6));
  EXPECT_EQ(m.log_obs(v1(1.0), v1(0.3), 2), m.log_obs(v1(1.0), v1(0.3), 9));
}

TEST(Nssm, NoiseFreeLimitFollowsDynamics) {
  const BenchmarkNssm m(1e-9, 1e-9, 1e-18);
  const Sequence s = simulate(m, 3, RngStream(3, 0));
  double z = 0.0;
  for (int t = 1; t <= 3; ++t) {
    if (t > 1) z = BenchmarkNssm::f(z, t);
    EXPECT_NEAR(s.z(0, t - 1), z, 1e-2);
    EXPECT_NEAR(s.x(0, t - 1), BenchmarkNssm::g(z), 1e-2);
  }
}

TEST(Nssm, LongSimulationIsFinite) {
  const BenchmarkNssm m(std::sqrt(10.0), 1.0);
  for (int r = 0; r < 100; ++r) {
    const Sequence s = simulate(m, 1000, RngStream(11, r));
    ASSERT_TRUE(s.z.allFinite());
    ASSERT_TRUE(s.x.allFinite());
    const double mean = s.z.mean();
    const double var = (s.z.array() - mean).square().mean();
    EXPECT_GT(var, 0.0);
    EXPECT_TRUE(std::isfinite(var));
  }
}

TEST(Nssm, ThetaRoundTrip) {
  const BenchmarkNssm m(2.0, 0.5, 3.0);
  const std::vector<double> th = {1.5, 0.25};
  const auto n = m.with_theta(th);
  EXPECT_EQ(n->theta(), th);
  EXPECT_EQ(dynamic_cast<const BenchmarkNssm&>(*n).init_var(), 3.0);
}

TEST(Nssm, ThetaGradientMatchesFiniteDifferences) {
  const BenchmarkNssm m(1.7, 0.6);
  const double zp = 0.4, z = 2.0, x = 0.5;
  std::vector<double> g(2, 0.0);
  m.accumulate_theta_grad(v1(zp), v1(z), v1(x), 3, 1.0, g);
  auto joint = [&](double sv, double sw) {
    const BenchmarkNssm q(sv, sw);
    return q.log_trans(v1(zp), v1(z), 3) + q.log_obs(v1(z), v1(x), 3);
  };
  const double h = 1e-6;
  EXPECT_NEAR(g[0], (joint(1.7 + h, 0.6) - joint(1.7 - h, 0.6)) / (2 * h), 1e-6);
  EXPECT_NEAR(g[1], (joint(1.7, 0.6 + h) - joint(1.7, 0.6 - h)) / (2 * h), 1e-6);
}

TEST(Lgssm, StandardNormalLogDensities) {
  const auto m = LinearGaussianSsm::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0);
  EXPECT_NEAR(m.log_trans(v1(0.0), v1(0.0), 2), -0.9189385, 1e-7);
  EXPECT_NEAR(m.log_trans(v1(0.0), v1(1.0), 2), -1.4189385, 1e-7);
}

TEST(Lgssm, DiagonalFactorizes) {
  Matrix A = Matrix::Identity(2, 2);
  Matrix C = Matrix::Identity(2, 2);
  Vector q(2), r(2);
  q << 0.5, 2.0;
  r << 1.5, 0.3;
  const LinearGaussianSsm m(A, C, q, r, Vector::Zero(2), Vector::Ones(2));
  Vector z(2), x(2);
  z << 0.3, -1.0;
  x << 1.0, 0.2;
  const auto s0 = LinearGaussianSsm::scalar(1, 1, 0.5, 1.5);
  const auto s1 = LinearGaussianSsm::scalar(1, 1, 2.0, 0.3);
  EXPECT_NEAR(m.log_obs(z, x, 1), s0.log_obs(v1(0.3), v1(1.0), 1) + s1.log_obs(v1(-1.0), v1(0.2), 1),
              1e-12);
}

TEST(Lgssm, NonPositiveCovarianceRejected) {
  EXPECT_THROW(LinearGaussianSsm::scalar(1.0, 1.0, 0.0, 1.0), InvalidArgument);
  EXPECT_THROW(LinearGaussianSsm::scalar(1.0, 1.0, 1.0, -2.0), InvalidArgument);
}

TEST(Lgssm, MarginalVarianceOfFirstObservation) {
  const auto m = LinearGaussianSsm::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 1.0);
  const int n = 100000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Sequence s = simulate(m, 1, RngStream(12, static_cast<std::uint64_t>(i)));
    s1 += s.x(0, 0);
    s2 += s.x(0, 0) * s.x(0, 0);
  }
  const double var = s2 / n - (s1 / n) * (s1 / n);
  EXPECT_NEAR(var, 2.0, 0.03 * 2.0);
}

TEST(Lgssm, ThetaIsStandardDeviations) {
  const auto m = LinearGaussianSsm::scalar(0.9, 1.0, 4.0, 9.0);
  EXPECT_EQ(m.theta(), (std::vector<double>{2.0, 3.0}));
  const std::vector<double> th = {0.5, 1.0};
  const auto n = m.with_theta(th);
  EXPECT_DOUBLE_EQ(dynamic_cast<const LinearGaussianSsm&>(*n).q()(0), 0.25);
}

TEST(Simulate, RejectsEmptyHorizon) {
  const BenchmarkNssm m(1.0, 1.0);
  EXPECT_THROW(simulate(m, 0, RngStream(1, 0)), InvalidArgument);
}

}  // namespace
}  // namespace nasmc

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace ics;
using support::make_toy;
using support::randm;

namespace {

Policy random_policy(std::mt19937_64& rng, int N, int nx, int nu, double scale) {
  Policy p;
  p.V = randm(rng, N * nu, 1);
  for (int k = 0; k < N; ++k) p.K_blocks.push_back(randm(rng, nu, nx, scale));
  return p;
}

// Largest |empirical - exact| / SE over a covariance block, with
// Var(S_ij) ~= (P_ii P_jj + P_ij^2) / n for Gaussian samples.
double cov_z(const Mat& emp, const Mat& exact, int n) {
  double worst = 0.0;
  for (int i = 0; i < exact.rows(); ++i) {
    for (int j = 0; j < exact.cols(); ++j) {
      const double se = std::sqrt((exact(i, i) * exact(j, j) + exact(i, j) * exact(i, j)) / n);
      if (se == 0.0) continue;
      worst = std::max(worst, std::abs(emp(i, j) - exact(i, j)) / se);
    }
  }
  return worst;
}

double mean_z(const Vec& emp, const Vec& exact, const Mat& cov, int n) {
  double worst = 0.0;
  for (int i = 0; i < exact.size(); ++i) {
    const double se = std::sqrt(cov(i, i) / n);
    if (se == 0.0) continue;
    worst = std::max(worst, std::abs(emp(i) - exact(i)) / se);
  }
  return worst;
}

}  // namespace

TEST(MonteCarlo, DiscreteLinearMatchesCovarianceFormulas) {
  std::mt19937_64 rng(31);
  const int N = 5, nx = 3, nu = 2;
  const double sigma = 1.3;
  std::vector<LinearizedStep> steps;
  for (int k = 0; k < N; ++k) {
    LinearizedStep s;
    s.A = Mat::Identity(nx, nx) + randm(rng, nx, nx, 0.2);
    s.B = randm(rng, nx, nu);
    s.r = randm(rng, nx, 1);
    s.G = randm(rng, nx, nx, 0.3);
    s.Sigma = sigma * s.G * s.G.transpose();
    steps.push_back(s);
  }
  const Mat L0 = randm(rng, nx, nx, 0.3);
  const Mat P0 = L0 * L0.transpose();
  const Vec x0 = randm(rng, nx, 1);
  const Policy p = random_policy(rng, N, nx, nu, 0.4);
  const auto bs = assemble(steps, sigma, P0);
  const Mat Px = state_covariance(bs, p.K());
  const Mat Pu = control_covariance(bs, p.K());
  const Vec X = state_mean(bs, x0, p.V);

  SimOptions o;
  o.trials = 10000;
  o.seed = 5;
  const auto sim = simulate_discrete_linear(steps, p, x0, P0, sigma, o);
  const int n = sim.valid();
  ASSERT_EQ(n, 10000);
  for (int k = 0; k <= N; ++k) {
    const Mat Pk = Px.block(k * nx, k * nx, nx, nx);
    EXPECT_LT(mean_z(sim.mean[k], X.segment(k * nx, nx), Pk, n), 3.0) << "state mean k=" << k;
    EXPECT_LT(cov_z(sim.cov[k], Pk, n), 3.0) << "state cov k=" << k;
  }
  for (int k = 0; k < N; ++k) {
    const Mat Pk = Pu.block(k * nu, k * nu, nu, nu);
    EXPECT_LT(mean_z(sim.control_mean[k], p.v(k), Pk, n), 3.0) << "control mean k=" << k;
    EXPECT_LT(cov_z(sim.control_cov[k], Pk, n), 3.0) << "control cov k=" << k;
  }
}

TEST(MonteCarlo, NoiseFreeTrialsFollowEulerMean) {
  auto t = make_toy(5, 0.0, 0.05);
  std::mt19937_64 rng(32);
  const Policy p = random_policy(rng, 5, 4, 2, 0.5);
  SimOptions o;
  o.trials = 7;
  o.substeps = 4;
  const auto sim = simulate_closed_loop(t.model, p, t.steps, t.spec.x0_mean, Mat::Zero(4, 4),
                                        t.sigma, o);
  // Reference Euler recursion with the same step.
  const double h = 1.0 / (5 * 4);
  Vec x = t.spec.x0_mean;
  for (int k = 0; k < 5; ++k) {
    for (int s = 0; s < 4; ++s) x = x + t.sigma * h * t.model.drift(x, p.v(k), 0.0);
    for (int j = 0; j < 7; ++j) {
      EXPECT_EQ(sim.state_samples[k + 1].col(j), x) << "trial " << j << " step " << k + 1;
      EXPECT_EQ(sim.control_samples[k].col(j), p.v(k));
    }
    EXPECT_LT(sim.cov[k + 1].norm(), 1e-20);
  }
}

TEST(MonteCarlo, SeedDeterminismAcrossThreadCounts) {
  auto t = make_toy(5, 0.05, 0.05);
  std::mt19937_64 rng(33);
  const Policy p = random_policy(rng, 5, 4, 2, 0.5);
  SimOptions o;
  o.trials = 300;
  o.substeps = 20;
  o.seed = 99;
  o.threads = 1;
  const auto a = simulate_closed_loop(t.model, p, t.steps, t.spec.x0_mean, t.spec.P_x0, t.sigma, o);
  o.threads = 3;
  const auto b = simulate_closed_loop(t.model, p, t.steps, t.spec.x0_mean, t.spec.P_x0, t.sigma, o);
  for (int k = 0; k <= 5; ++k) {
    EXPECT_EQ(a.state_samples[k], b.state_samples[k]);
    EXPECT_EQ(a.cov[k], b.cov[k]);
  }
  o.seed = 100;
  const auto c = simulate_closed_loop(t.model, p, t.steps, t.spec.x0_mean, t.spec.P_x0, t.sigma, o);
  EXPECT_NE(a.terminal_mean, c.terminal_mean);
}

TEST(MonteCarlo, LinearPlantMatchesDiscreteAnalysis) {
  // For a linear plant the innovation recovers the discrete noise exactly, so the closed-loop
  // simulation agrees with the block formulas up to Euler-Maruyama bias.
  auto t = make_toy(6, 0.1, 0.0);
  std::mt19937_64 rng(34);
  const Policy p = random_policy(rng, 6, 4, 2, 0.3);
  SimOptions o;
  o.trials = 4000;
  o.substeps = 100;
  const auto sim = simulate_closed_loop(t.model, p, t.steps, t.spec.x0_mean, t.spec.P_x0, t.sigma, o);
  const Mat Px = state_covariance(t.bs, p.K());
  const Vec X = state_mean(t.bs, t.spec.x0_mean, p.V);
  const Mat PN = Px.bottomRightCorner(4, 4);
  EXPECT_LT((sim.terminal_mean - X.tail(4)).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((sim.terminal_cov - PN).cwiseAbs().maxCoeff(), 0.1 * PN.cwiseAbs().maxCoeff());
}

TEST(MonteCarlo, OpenLoopSpreadDominatesClosedLoop) {
  auto t = make_toy(8, 0.05, 0.05);
  IcsSettings s;
  const auto r = ics_solve(t.model, t.spec, t.ref.u_hat, s);
  ASSERT_TRUE(r.converged);
  SimOptions o;
  o.trials = 3000;
  o.substeps = 50;
  const auto closed =
      simulate_closed_loop(t.model, r.policy, r.steps, t.spec.x0_mean, t.spec.P_x0, t.sigma, o);
  Policy open = r.policy;
  for (auto& K : open.K_blocks) K.setZero();
  const auto opened =
      simulate_closed_loop(t.model, open, r.steps, t.spec.x0_mean, t.spec.P_x0, t.sigma, o);
  const Mat D = opened.terminal_cov - closed.terminal_cov;
  // Margin covers sampling error of both estimates (relative SE ~ sqrt(2/3000)).
  const double tol = 3.0 * std::sqrt(2.0 / o.trials) * opened.terminal_cov.norm();
  EXPECT_GT(detail::min_eigenvalue(D), -tol);
  EXPECT_GT(D.trace(), 0.0);
}

TEST(MonteCarlo, DivergentTrialsRaise) {
  ModelSpec m = make_linear_model(Mat::Zero(1, 1), Mat::Zero(1, 1), Mat::Identity(1, 1));
  m.drift = [](const Vec& x, const Vec&, double) -> Vec { return x.array().square().matrix(); };
  LinearizedStep st{Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Zero(1), Mat::Zero(1, 1), Mat::Zero(1, 1)};
  Policy p;
  p.V = Vec::Zero(3);
  p.K_blocks.assign(3, Mat::Zero(1, 1));
  SimOptions o;
  o.trials = 50;
  o.substeps = 10;
  EXPECT_THROW(simulate_closed_loop(m, p, std::vector<LinearizedStep>(3, st), support::vec({2.0}),
                                    Mat::Identity(1, 1), 5.0, o),
               SimulationError);
}

TEST(MonteCarlo, RejectsMismatchedPolicy) {
  auto t = make_toy(5);
  Policy p;
  p.V = Vec::Zero(8);
  p.K_blocks.assign(4, Mat::Zero(2, 4));
  SimOptions o;
  o.trials = 2;
  EXPECT_THROW(simulate_closed_loop(t.model, p, t.steps, t.spec.x0_mean, t.spec.P_x0, t.sigma, o),
               InvalidArgument);
}

TEST(Violation, InactiveConstraintHasZeroRate) {
  auto t = make_toy(4);
  std::mt19937_64 rng(35);
  const Policy p = random_policy(rng, 4, 4, 2, 0.2);
  SimOptions o;
  o.trials = 500;
  const auto sim = simulate_discrete_linear(t.steps, p, t.spec.x0_mean, t.spec.P_x0, t.sigma, o);
  for (int k = 0; k <= 4; ++k) EXPECT_EQ(violation_rate(sim, {Vec::Unit(4, 0), 1e9, 0.1}, k), 0.0);
  EXPECT_EQ(joint_violation_rate(sim, {}, 2), 0.0);
  EXPECT_EQ(joint_violation_rate(sim, {{Vec::Unit(4, 0), -1e9, 0.1}}, 2), 1.0);
}

TEST(Ellipse, IdentityCovarianceGivesChiSquareCircle) {
  const auto e = confidence_ellipse({0.5, -1.0}, Eigen::Matrix2d::Identity(), 0.9);
  EXPECT_NEAR(e.semi_axes(0), 2.1460, 5e-5);
  EXPECT_NEAR(e.semi_axes(1), 2.1460, 5e-5);
  EXPECT_NEAR(e.semi_axes(0) * e.semi_axes(0), -2.0 * std::log(0.1), 1e-12);
  EXPECT_EQ(e.center, Eigen::Vector2d(0.5, -1.0));
}

TEST(Ellipse, AxesFollowEigenvalues) {
  const auto e = confidence_ellipse({0, 0}, Eigen::Vector2d(4, 1).asDiagonal(), 0.9);
  EXPECT_NEAR(e.semi_axes(0) / e.semi_axes(1), 2.0, 1e-12);
  EXPECT_NEAR(std::abs(std::cos(e.angle)), 1.0, 1e-12);
  const auto f = confidence_ellipse({0, 0}, Eigen::Vector2d(1, 9).asDiagonal(), 0.5);
  EXPECT_NEAR(std::abs(std::sin(f.angle)), 1.0, 1e-12);
  EXPECT_THROW(confidence_ellipse({0, 0}, Eigen::Matrix2d::Identity(), 1.0), InvalidArgument);
}

TEST(Ellipse, ContainsNinetyPercentOfSamples) {
  Eigen::Matrix2d C;
  C << 2.0, 0.8, 0.8, 0.7;
  const Eigen::Vector2d mu(1.0, -2.0);
  const auto e = confidence_ellipse(mu, C, 0.9);
  const Eigen::Matrix2d Lc = C.llt().matrixL();
  std::mt19937_64 rng(36);
  std::normal_distribution<double> g;
  const Eigen::Rotation2Dd rot(-e.angle);
  int inside = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d x = mu + Lc * Eigen::Vector2d(g(rng), g(rng));
    const Eigen::Vector2d q = rot * (x - mu);
    const double r = std::pow(q(0) / e.semi_axes(0), 2) + std::pow(q(1) / e.semi_axes(1), 2);
    inside += r <= 1.0;
  }
  EXPECT_NEAR(static_cast<double>(inside) / n, 0.9, 0.01);
}

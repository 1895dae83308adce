#include <gtest/gtest.h>

#include "support.hpp"

using namespace ics;
using support::make_toy;
using support::vec;

namespace {

IcsSettings toy_settings() {
  IcsSettings s;
  s.solver.eps_primal = s.solver.eps_dual = s.solver.eps_gap = 1e-7;
  return s;
}

}  // namespace

TEST(PropagateMean, ZeroDriftKeepsState) {
  ModelSpec m = make_linear_model(Mat::Zero(3, 3), Mat::Zero(3, 1), Mat::Zero(3, 1));
  const Vec x0 = vec({1.0, -2.0, 0.5});
  const auto xs = propagate_mean(m, std::vector<Vec>(4, vec({3.0})), x0, 7.0);
  ASSERT_EQ(xs.size(), 5u);
  for (const auto& x : xs) EXPECT_EQ(x, x0);
}

TEST(PropagateMean, DoubleIntegratorIsExactForConstantThrust) {
  auto m = make_drag_double_integrator({0.0, 0.0});
  const Vec x0 = vec({1.0, 2.0, 0.5, -1.0});
  const Vec u = vec({0.2, -0.4});
  const double sigma = 3.0;
  const int N = 6;
  const auto xs = propagate_mean(m, std::vector<Vec>(N, u), x0, sigma, 3);
  for (int k = 0; k <= N; ++k) {
    const double t = sigma * k / N;
    Vec expect(4);
    expect.head(2) = x0.head(2) + t * x0.tail(2) + 0.5 * t * t * u;
    expect.tail(2) = x0.tail(2) + t * u;
    EXPECT_LT((xs[k] - expect).cwiseAbs().maxCoeff(), 1e-12) << "k = " << k;
  }
}

TEST(PropagateMean, ReportsDivergentStep) {
  ModelSpec m = make_linear_model(Mat::Identity(1, 1), Mat::Zero(1, 1), Mat::Zero(1, 1));
  m.drift = [](const Vec& x, const Vec&, double) -> Vec { return x.array().square().matrix(); };
  try {
    propagate_mean(m, std::vector<Vec>(5, Vec::Zero(1)), vec({1.0}), 10.0, 2);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Relaxation, ScheduleDecaysToOne) {
  Relaxation r{4, 0.5};
  EXPECT_DOUBLE_EQ(detail::relaxation_scale(6.0, r, 1), 6.0);
  EXPECT_DOUBLE_EQ(detail::relaxation_scale(6.0, r, 2), 3.0);
  EXPECT_DOUBLE_EQ(detail::relaxation_scale(6.0, r, 3), 1.5);
  EXPECT_DOUBLE_EQ(detail::relaxation_scale(6.0, r, 4), 1.0);
  EXPECT_DOUBLE_EQ(detail::relaxation_scale(6.0, r, 5), 1.0);
  EXPECT_DOUBLE_EQ(detail::relaxation_scale(0.5, r, 1), 1.0);
}

TEST(Relaxation, InitialScaleCoversReferenceWithMargin) {
  auto e = support::make_drag_example();
  const auto xs = propagate_mean(e.model, e.guess, e.spec.x0_mean, e.sigma);
  const double s0 = detail::initial_relaxation(e.spec, xs);
  double worst = 0.0;
  for (int k = 1; k <= 25; ++k) worst = std::max(worst, std::abs(xs[k](0)));
  EXPECT_GT(worst, 6.0);  // the seed violates |xi_1| <= 6
  EXPECT_NEAR(s0, worst / (0.95 * 6.0), 1e-12);
}

TEST(Ics, LinearDynamicsReachFixedPointInTwoIterations) {
  auto t = make_toy(8);
  const auto r = ics_solve(t.model, t.spec, t.ref.u_hat, toy_settings());
  ASSERT_TRUE(r.converged);
  ASSERT_GE(r.history.size(), 2u);
  EXPECT_LE(r.history[1].max_control_change, 10 * 1e-3);
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(Ics, FirstOrderAndExactAgreeOnLinearModel) {
  auto t = make_toy(8);
  auto s = toy_settings();
  const auto exact = ics_solve(t.model, t.spec, t.ref.u_hat, s);
  s.discretization = DiscretizationScheme::first_order;
  const auto rough = ics_solve(t.model, t.spec, t.ref.u_hat, s);
  ASSERT_TRUE(exact.converged && rough.converged);
  // First-order ZOH is O(dtau) off; the two solutions are close but not identical.
  const double diff = (exact.policy.V - rough.policy.V).cwiseAbs().maxCoeff();
  EXPECT_GT(diff, 0.0);
  EXPECT_LT(diff, 0.5);
}

TEST(Ics, SingleIterationReportsNotConverged) {
  auto t = make_toy(6);
  auto s = toy_settings();
  s.max_iterations = 1;
  const auto r = ics_solve(t.model, t.spec, t.ref.u_hat, s);
  EXPECT_FALSE(r.converged);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].status, conic::SolveStatus::optimal);
  EXPECT_GT(r.history[0].max_control_change, 1e-3);
}

TEST(Ics, DragToyConvergesAndRespectsTrustRegion) {
  auto t = make_toy(8, 0.05, 0.05);
  const auto r = ics_solve(t.model, t.spec, t.ref.u_hat, toy_settings());
  ASSERT_TRUE(r.converged);
  EXPECT_GE(r.history.size(), 3u);
  for (const auto& rec : r.history) EXPECT_LT(rec.trust_region_residual, 1e-4);
  EXPECT_LT(r.history.back().terminal_mean_error, 1e-3);
}

TEST(Ics, RunsAreDeterministic) {
  auto t = make_toy(6, 0.05, 0.05);
  const auto a = ics_solve(t.model, t.spec, t.ref.u_hat, toy_settings());
  const auto b = ics_solve(t.model, t.spec, t.ref.u_hat, toy_settings());
  ASSERT_EQ(a.history.size(), b.history.size());
  EXPECT_EQ(a.policy.V, b.policy.V);
  for (std::size_t i = 0; i < a.history.size(); ++i)
    EXPECT_EQ(a.history[i].objective, b.history[i].objective);
}

TEST(Ics, MonteCarloMeanPropagationTracksDeterministic) {
  auto t = make_toy(6, 0.05, 0.05);
  auto s = toy_settings();
  const auto det = ics_solve(t.model, t.spec, t.ref.u_hat, s);
  s.mean_propagation = MeanPropagation::monte_carlo;
  s.mc_trials = 400;
  s.mc_substeps = 50;
  s.max_iterations = 6;
  const auto mc = ics_solve(t.model, t.spec, t.ref.u_hat, s);
  EXPECT_LT((det.policy.V - mc.policy.V).cwiseAbs().maxCoeff(), 0.1);
}

TEST(Ics, AutoSwitchUsesHardModeNearTarget) {
  auto t = make_toy(6, 0.05, 0.05);
  auto s = toy_settings();
  s.terminal_policy = TerminalPolicy::auto_switch;
  const auto r = ics_solve(t.model, t.spec, t.ref.u_hat, s);
  ASSERT_TRUE(r.converged);
  EXPECT_EQ(r.history.back().terminal_mode, TerminalMode::hard);
  EXPECT_LT(r.history.back().terminal_mean_error, 1e-5);
}

TEST(Ics, InfeasibleSubproblemRaisesWithHistory) {
  auto t = make_toy(4);
  t.spec.P_xf = 1e-8 * Mat::Identity(4, 4);
  t.spec.terminal_mode = TerminalMode::hard;
  auto s = toy_settings();
  s.solver.max_iter = 20000;
  try {
    ics_solve(t.model, t.spec, t.ref.u_hat, s);
    FAIL() << "expected IcsError";
  } catch (const IcsError& e) {
    ASSERT_EQ(e.history().size(), 1u);
    EXPECT_NE(e.history()[0].status, conic::SolveStatus::optimal);
  }
}

TEST(Ics, RejectsBadInputs) {
  auto t = make_toy(4);
  auto s = toy_settings();
  EXPECT_THROW(ics_solve(t.model, t.spec, std::vector<Vec>(3, Vec::Zero(2)), s), InvalidArgument);
  s.tol = 0.0;
  EXPECT_THROW(ics_solve(t.model, t.spec, t.ref.u_hat, s), InvalidArgument);
}

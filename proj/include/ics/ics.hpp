#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ics/conic/solver.hpp"
#include "ics/montecarlo.hpp"
#include "ics/problem.hpp"

namespace ics {

enum class MeanPropagation { deterministic, monte_carlo };
/// auto_switch: soft until the reference terminal error is within delta_x / 2, hard afterwards.
enum class TerminalPolicy { soft, hard, auto_switch };

struct IcsSettings {
  int max_iterations = 15;
  double tol = 1e-3;
  TrustRegion trust_region;
  Relaxation relaxation;
  MeanPropagation mean_propagation = MeanPropagation::deterministic;
  int mc_trials = 500;
  std::uint64_t mc_seed = 1;
  DiscretizationScheme discretization = DiscretizationScheme::exact;
  int substeps = 10;     // RK4 substeps for discretization and mean propagation
  int mc_substeps = 200;  // Euler-Maruyama substeps for monte_carlo mean propagation
  TerminalPolicy terminal_policy = TerminalPolicy::soft;
  conic::SolverSettings solver;
  bool warm_start = true;
};

struct IterationRecord {
  int index = 0;
  ReferenceTrajectory reference;
  Policy policy;
  double objective = 0.0;             // subproblem optimum
  double terminal_mean_error = 0.0;   // |E_N Xbar* - xf| of the subproblem solution
  double max_control_change = 0.0;    // max_k |v_k - uhat_k|
  double relax_scale = 1.0;
  TerminalMode terminal_mode = TerminalMode::soft;
  conic::SolveStatus status = conic::SolveStatus::max_iter;
  conic::Residuals residuals;
  int solver_iterations = 0;
  double trust_region_residual = 0.0;  // max positive part of the trust-region rows
  bool retried = false;
};

struct IcsResult {
  Policy policy;
  std::vector<IterationRecord> history;
  bool converged = false;
  ReferenceTrajectory reference;          // linearization of the final subproblem
  std::vector<LinearizedStep> steps;      // its discretization
};

/// Thrown when a subproblem stays infeasible after the retry or the solver hits max_iter.
class IcsError : public std::runtime_error {
 public:
  IcsError(const std::string& what, std::vector<IterationRecord> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<IterationRecord>& history() const { return history_; }

 private:
  std::vector<IterationRecord> history_;
};

/// RK4 integration of dx/dtau = sigma f(x, u_k, t) with M substeps per interval.
inline std::vector<Vec> propagate_mean(const ModelSpec& model, const std::vector<Vec>& u,
                                       const Vec& x0, double sigma, int substeps = 10,
                                       double t0 = 0.0) {
  detail::require(!u.empty(), "propagate_mean: need at least one control");
  detail::require(substeps >= 1, "propagate_mean: substeps must be >= 1");
  detail::require_size(x0, model.n_x, "propagate_mean: x0");
  const int N = static_cast<int>(u.size());
  const double h = 1.0 / (N * substeps);
  std::vector<Vec> xs{x0};
  Vec x = x0;
  for (int k = 0; k < N; ++k) {
    detail::require_size(u[k], model.n_u, "propagate_mean: control");
    for (int s = 0; s < substeps; ++s) {
      const double tau = static_cast<double>(k * substeps + s) * h;
      auto f = [&](const Vec& z, double ta) { return Vec(sigma * model.drift(z, u[k], t0 + sigma * ta)); };
      const Vec k1 = f(x, tau);
      const Vec k2 = f(x + 0.5 * h * k1, tau + 0.5 * h);
      const Vec k3 = f(x + 0.5 * h * k2, tau + 0.5 * h);
      const Vec k4 = f(x + h * k3, tau + h);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) {
      throw NumericalFailure("propagate_mean: state diverged in step " + std::to_string(k));
    }
    xs.push_back(x);
  }
  return xs;
}

/// Sample mean of closed-loop rollouts under (v, K) with controller-state matrices A_k.
inline std::vector<Vec> propagate_mean_mc(const ModelSpec& model, const Policy& policy,
                                          const std::vector<LinearizedStep>& steps,
                                          const Vec& x0, const Mat& P_x0, double sigma,
                                          const SimOptions& opts) {
  return simulate_closed_loop(model, policy, steps, x0, P_x0, sigma, opts).mean;
}

namespace detail {

inline double max_control_change(const Policy& p, const std::vector<Vec>& u_hat) {
  double worst = 0.0;
  for (int k = 0; k < p.N(); ++k) worst = std::max(worst, (p.v(k) - u_hat[k]).norm());
  return worst;
}

/// Smallest s >= 1 such that every positive-offset state half-space holds at the reference mean
/// with 5% margin: a^T xhat_k <= 0.95 s alpha.
inline double initial_relaxation(const CSProblemSpec& spec, const std::vector<Vec>& x_hat) {
  double s = 1.0;
  for (std::size_t k = 0; k < spec.state_constraints.size() && k < x_hat.size(); ++k) {
    for (const auto& h : spec.state_constraints[k]) {
      if (h.offset <= 0.0) continue;
      s = std::max(s, h.normal.dot(x_hat[k]) / (0.95 * h.offset));
    }
  }
  return s;
}

inline double relaxation_scale(double s0, const Relaxation& r, int j) {
  // j counts iterations since the schedule (re)started, from 1.
  if (j > r.n_relax) return 1.0;
  return std::max(1.0, s0 * std::pow(r.rho, j - 1));
}

inline double trust_region_residual(const BlockSystem& bs, const CSProblemSpec& spec,
                                    const ReferenceTrajectory& ref, const Policy& p) {
  const auto part = build_trust_region(bs, spec, ref);
  double worst = 0.0;
  for (const auto& row : part.inequalities) {
    worst = std::max(worst, chance_row_value(bs, row, p));
  }
  return worst;
}

}  // namespace detail

/// Successive convexification. Each iteration propagates the nonlinear mean under the current
/// reference controls, linearizes and discretizes about it, solves the convex covariance
/// steering subproblem and stops once max_k |v_k - uhat_k| <= tol with the chance constraints
/// at their final (unrelaxed) offsets.
inline IcsResult ics_solve(const ModelSpec& model, const CSProblemSpec& spec_in,
                           const std::vector<Vec>& initial_guess, const IcsSettings& settings,
                           const std::optional<std::vector<Mat>>& initial_gains = std::nullopt) {
  detail::require(settings.max_iterations >= 1, "ics: max_iterations must be >= 1");
  detail::require(settings.tol > 0.0, "ics: tol must be > 0");
  CSProblemSpec spec = spec_in;
  spec.trust_region = settings.trust_region;
  spec.relaxation = settings.relaxation;
  spec.validate(model.n_u);
  const int N = spec.N();
  detail::require(static_cast<int>(initial_guess.size()) == N,
                  "ics: initial guess must hold N controls");
  for (const auto& u : initial_guess) detail::require_size(u, model.n_u, "ics: initial guess");
  const double sigma = spec.weights.scale * N;

  std::vector<Vec> u_hat = initial_guess;
  Policy K_hat = zero_feedback_policy(initial_guess, model.n_x);
  if (initial_gains) {
    detail::require(static_cast<int>(initial_gains->size()) == N, "ics: need N initial gains");
    K_hat.K_blocks = *initial_gains;
  }
  std::vector<LinearizedStep> prev_steps;

  IcsResult result;
  std::optional<conic::WarmStart> warm_start;
  double s0 = 0.0;
  int schedule_pos = 1;

  for (int i = 1; i <= settings.max_iterations; ++i) {
    ReferenceTrajectory ref;
    ref.sigma = sigma;
    ref.u_hat = u_hat;
    if (settings.mean_propagation == MeanPropagation::monte_carlo && !prev_steps.empty()) {
      SimOptions o;
      o.trials = settings.mc_trials;
      o.seed = settings.mc_seed + static_cast<std::uint64_t>(i);
      o.substeps = settings.mc_substeps;
      Policy p = K_hat;
      p.V.resize(N * model.n_u);
      for (int k = 0; k < N; ++k) p.V.segment(k * model.n_u, model.n_u) = u_hat[k];
      ref.x_hat = propagate_mean_mc(model, p, prev_steps, spec.x0_mean, spec.P_x0, sigma, o);
    } else {
      ref.x_hat = propagate_mean(model, u_hat, spec.x0_mean, sigma, settings.substeps);
    }
    if (i == 1) s0 = detail::initial_relaxation(spec, ref.x_hat);

    const auto steps = discretize(model, ref, settings.discretization, settings.substeps);
    const BlockSystem bs = assemble(steps, sigma, spec.P_x0);

    TerminalMode mode = TerminalMode::soft;
    if (settings.terminal_policy == TerminalPolicy::hard) mode = TerminalMode::hard;
    if (settings.terminal_policy == TerminalPolicy::auto_switch &&
        (ref.x_hat.back() - spec.xf_mean).cwiseAbs().maxCoeff() <= 0.5 * spec.trust_region.delta_x) {
      mode = TerminalMode::hard;
    }

    IterationRecord rec;
    rec.index = i;
    rec.reference = ref;
    rec.terminal_mode = mode;

    auto attempt = [&](const CSProblemSpec& sp, double scale) {
      const auto parts = build_subproblem(bs, sp, ref, mode, scale);
      auto low = lower(bs, parts);
      const conic::WarmStart* ws = nullptr;
      if (settings.warm_start && warm_start && warm_start->x.size() == low.num_variables() &&
          warm_start->y.size() == low.program.num_rows()) {
        ws = &*warm_start;
      }
      auto sol = conic::solve(low.program, settings.solver, ws);
      return std::make_pair(std::move(low), std::move(sol));
    };

    double scale = detail::relaxation_scale(s0, spec.relaxation, schedule_pos);
    CSProblemSpec sp = spec;
    auto [low, sol] = attempt(sp, scale);
    if (sol.status == conic::SolveStatus::infeasible) {
      rec.retried = true;
      sp.trust_region.delta_x *= 2.0;
      sp.trust_region.delta_u *= 2.0;
      schedule_pos = 1;
      scale = detail::relaxation_scale(s0, spec.relaxation, schedule_pos);
      std::tie(low, sol) = attempt(sp, scale);
    }
    rec.relax_scale = scale;
    rec.status = sol.status;
    rec.residuals = sol.residuals;
    rec.solver_iterations = sol.iterations;
    if (sol.status != conic::SolveStatus::optimal) {
      result.history.push_back(rec);
      throw IcsError(std::string("ics: subproblem ") + conic::to_string(sol.status) +
                         " at iteration " + std::to_string(i),
                     result.history);
    }
    warm_start = conic::WarmStart{sol.primal, sol.dual, sol.slack};

    const Policy p = low.extract_policy(sol.primal);
    rec.policy = p;
    rec.objective = low.objective(sol.primal);
    const Vec X = state_mean(bs, spec.x0_mean, p.V);
    rec.terminal_mean_error = (X.tail(model.n_x) - spec.xf_mean).norm();
    rec.max_control_change = detail::max_control_change(p, u_hat);
    rec.trust_region_residual = detail::trust_region_residual(bs, sp, ref, p);
    result.history.push_back(rec);

    result.policy = p;
    result.reference = ref;
    result.steps = steps;
    ++schedule_pos;

    if (rec.max_control_change <= settings.tol && scale == 1.0) {
      result.converged = true;
      break;
    }
    for (int k = 0; k < N; ++k) u_hat[k] = p.v(k);
    K_hat = p;
    prev_steps = steps;
  }
  return result;
}

}  // namespace ics

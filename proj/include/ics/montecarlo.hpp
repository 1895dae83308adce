#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

#include "ics/problem.hpp"

namespace ics {

struct SimOptions {
  int trials = 5000;
  int substeps = 200;
  std::uint64_t seed = 1;
  bool record_full_paths = false;
  int max_recorded_paths = 50;
  double max_divergent_fraction = 0.01;
  int threads = 0;  // 0: hardware concurrency
};

/// Empirical statistics on the grid tau_k. Samples of every valid trial are kept so rates for
/// arbitrary half-spaces can be computed afterwards.
struct SimulationResult {
  std::vector<Vec> mean;          // N + 1
  std::vector<Mat> cov;           // N + 1
  std::vector<Vec> control_mean;  // N
  std::vector<Mat> control_cov;   // N
  Vec terminal_mean;
  Mat terminal_cov;
  int trials = 0;
  int divergent = 0;
  std::vector<Mat> state_samples;    // N + 1 matrices, n_x x valid trials
  std::vector<Mat> control_samples;  // N matrices, n_u x valid trials
  std::vector<std::vector<Vec>> paths;  // substep paths of the first trials, if requested

  int N() const { return static_cast<int>(control_mean.size()); }
  int valid() const { return trials - divergent; }
};

struct Ellipse {
  Eigen::Vector2d center;
  Eigen::Vector2d semi_axes;  // major, minor
  double angle = 0.0;         // of the major axis, radians
};

namespace detail {

inline std::mt19937_64 trial_rng(std::uint64_t seed, int trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

inline Vec gaussian(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> g;
  Vec z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = g(rng);
  return z;
}

struct TrialOutput {
  std::vector<Vec> x;  // N + 1
  std::vector<Vec> u;  // N
  std::vector<Vec> path;
  bool ok = true;
};

template <class Trial>
std::vector<TrialOutput> run_trials(int trials, int threads, Trial&& trial) {
  std::vector<TrialOutput> out(trials);
  int nt = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  nt = std::clamp(nt, 1, std::max(1, trials));
  if (nt == 1) {
    for (int i = 0; i < trials; ++i) out[i] = trial(i);
    return out;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < trials; i += nt) out[i] = trial(i);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

inline Mat sample_cov(const Mat& S, const Vec& mean) {
  const Eigen::Index n = S.cols();
  if (n < 2) return Mat::Zero(S.rows(), S.rows());
  const Mat C = S.colwise() - mean;
  Mat P = C * C.transpose() / static_cast<double>(n - 1);
  return 0.5 * (P + P.transpose());
}

inline SimulationResult collect(std::vector<TrialOutput>&& outs, int N, int nx, int nu,
                                const SimOptions& opts) {
  SimulationResult res;
  res.trials = static_cast<int>(outs.size());
  std::vector<int> ok;
  for (int i = 0; i < res.trials; ++i) {
    if (outs[i].ok) ok.push_back(i); else ++res.divergent;
  }
  if (res.divergent > opts.max_divergent_fraction * res.trials) {
    throw SimulationError("simulation: " + std::to_string(res.divergent) + " of " +
                          std::to_string(res.trials) + " trials diverged");
  }
  const int n = static_cast<int>(ok.size());
  if (n == 0) throw SimulationError("simulation: no valid trials");
  res.state_samples.assign(N + 1, Mat(nx, n));
  res.control_samples.assign(N, Mat(nu, n));
  for (int j = 0; j < n; ++j) {
    const auto& o = outs[ok[j]];
    for (int k = 0; k <= N; ++k) res.state_samples[k].col(j) = o.x[k];
    for (int k = 0; k < N; ++k) res.control_samples[k].col(j) = o.u[k];
  }
  for (int k = 0; k <= N; ++k) {
    res.mean.push_back(res.state_samples[k].rowwise().mean());
    res.cov.push_back(sample_cov(res.state_samples[k], res.mean.back()));
  }
  for (int k = 0; k < N; ++k) {
    res.control_mean.push_back(res.control_samples[k].rowwise().mean());
    res.control_cov.push_back(sample_cov(res.control_samples[k], res.control_mean.back()));
  }
  res.terminal_mean = res.mean.back();
  res.terminal_cov = res.cov.back();
  if (opts.record_full_paths) {
    for (int j = 0; j < std::min(n, opts.max_recorded_paths); ++j) {
      res.paths.push_back(std::move(outs[ok[j]].path));
    }
  }
  return res;
}

inline void check_policy(const Policy& policy, const std::vector<LinearizedStep>& steps, int nx,
                         int nu) {
  require(policy.N() == static_cast<int>(steps.size()),
          "simulation: policy has " + std::to_string(policy.N()) + " steps, linearization has " +
              std::to_string(steps.size()));
  require_size(policy.V, policy.N() * nu, "simulation: policy V");
  for (const auto& K : policy.K_blocks) require_shape(K, nu, nx, "simulation: feedback gain");
  for (const auto& s : steps) require_shape(s.A, nx, nx, "simulation: step A");
}

}  // namespace detail

/// Closed-loop Euler-Maruyama simulation of the nonlinear SDE in normalized time,
///   dx = sigma f(x, u, t) dtau + sqrt(sigma) G dw_tau,
/// under u_k = v_k + K_k y_k. The controller state follows y_{k+1} = A_k y_k + (x_{k+1} - m_{k+1})
/// where m_{k+1} is the noise-free propagation from x_k with the same substeps.
inline SimulationResult simulate_closed_loop(const ModelSpec& model, const Policy& policy,
                                             const std::vector<LinearizedStep>& steps,
                                             const Vec& x0_mean, const Mat& P_x0, double sigma,
                                             const SimOptions& opts, double t0 = 0.0) {
  const int nx = model.n_x, nu = model.n_u, N = policy.N();
  detail::require(opts.trials >= 1, "simulation: trials must be >= 1");
  detail::require(opts.substeps >= 1, "simulation: substeps must be >= 1");
  detail::require(sigma > 0.0, "simulation: sigma must be > 0");
  detail::check_policy(policy, steps, nx, nu);
  detail::require_size(x0_mean, nx, "simulation: x0_mean");
  detail::require_shape(P_x0, nx, nx, "simulation: P_x0");
  const Mat P0_root = psd_sqrt(P_x0);
  const double h = 1.0 / (N * opts.substeps);
  const double sq = std::sqrt(sigma * h);

  auto trial = [&](int i) {
    detail::TrialOutput o;
    auto rng = detail::trial_rng(opts.seed, i);
    Vec x = x0_mean + P0_root * detail::gaussian(rng, nx);
    Vec y = x - x0_mean;
    o.x.push_back(x);
    const bool keep_path = opts.record_full_paths && i < opts.max_recorded_paths;
    if (keep_path) o.path.push_back(x);
    for (int k = 0; k < N && o.ok; ++k) {
      const Vec u = policy.v(k) + policy.K_blocks[k] * y;
      Vec m = x;
      for (int s = 0; s < opts.substeps; ++s) {
        const double t = t0 + sigma * (static_cast<double>(k * opts.substeps + s) * h);
        const Mat G = model.diffusion(t);
        x = x + sigma * h * model.drift(x, u, t) + sq * G * detail::gaussian(rng, G.cols());
        m = m + sigma * h * model.drift(m, u, t);
        if (keep_path) o.path.push_back(x);
      }
      if (!x.allFinite() || !m.allFinite()) {
        o.ok = false;
        break;
      }
      y = steps[k].A * y + (x - m);
      o.u.push_back(u);
      o.x.push_back(x);
    }
    return o;
  };
  auto outs = detail::run_trials(opts.trials, opts.threads, trial);
  return detail::collect(std::move(outs), N, nx, nu, opts);
}

/// Exact simulation of the discrete linear system x_{k+1} = A_k x_k + B_k u_k + r_k +
/// sqrt(sigma) G_k w_k with y_{k+1} = A_k y_k + sqrt(sigma) G_k w_k.
inline SimulationResult simulate_discrete_linear(const std::vector<LinearizedStep>& steps,
                                                 const Policy& policy, const Vec& x0_mean,
                                                 const Mat& P_x0, double sigma,
                                                 const SimOptions& opts) {
  detail::require(!steps.empty(), "simulation: need at least one step");
  const int nx = static_cast<int>(steps.front().A.rows());
  const int nu = static_cast<int>(steps.front().B.cols());
  const int N = static_cast<int>(steps.size());
  detail::require(opts.trials >= 1, "simulation: trials must be >= 1");
  detail::check_policy(policy, steps, nx, nu);
  const Mat P0_root = psd_sqrt(P_x0);
  const double sq = std::sqrt(sigma);
  auto trial = [&](int i) {
    detail::TrialOutput o;
    auto rng = detail::trial_rng(opts.seed, i);
    Vec x = x0_mean + P0_root * detail::gaussian(rng, nx);
    Vec y = x - x0_mean;
    o.x.push_back(x);
    for (int k = 0; k < N; ++k) {
      const auto& s = steps[k];
      const Vec u = policy.v(k) + policy.K_blocks[k] * y;
      const Vec noise = sq * s.G * detail::gaussian(rng, s.G.cols());
      x = s.A * x + s.B * u + s.r + noise;
      y = s.A * y + noise;
      o.u.push_back(u);
      o.x.push_back(x);
    }
    o.ok = x.allFinite();
    return o;
  };
  auto outs = detail::run_trials(opts.trials, opts.threads, trial);
  return detail::collect(std::move(outs), N, nx, nu, opts);
}

/// Fraction of valid trials with normal^T x_k > offset.
inline double violation_rate(const SimulationResult& r, const HalfSpace& h, int k) {
  detail::require(k >= 0 && k < static_cast<int>(r.state_samples.size()),
                  "violation_rate: step out of range");
  const Mat& S = r.state_samples[k];
  detail::require_size(h.normal, S.rows(), "violation_rate: normal");
  const Eigen::RowVectorXd v = h.normal.transpose() * S;
  return static_cast<double>((v.array() > h.offset).count()) / static_cast<double>(S.cols());
}

/// Fraction of valid trials violating at least one of the half-spaces at step k.
inline double joint_violation_rate(const SimulationResult& r, const std::vector<HalfSpace>& hs,
                                   int k) {
  if (hs.empty()) return 0.0;
  const Mat& S = r.state_samples.at(k);
  Eigen::Array<bool, Eigen::Dynamic, 1> bad = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(S.cols(), false);
  for (const auto& h : hs) {
    detail::require_size(h.normal, S.rows(), "violation_rate: normal");
    bad = bad || ((h.normal.transpose() * S).transpose().array() > h.offset);
  }
  return static_cast<double>(bad.count()) / static_cast<double>(S.cols());
}

/// Level set of a planar Gaussian containing probability `level`.
inline Ellipse confidence_ellipse(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov,
                                  double level) {
  detail::require_psd(cov, "confidence_ellipse: cov");
  const double c = chi_square_2dof_quantile(level);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(0.5 * (cov + cov.transpose()));
  const Eigen::Vector2d lambda = es.eigenvalues().cwiseMax(0.0);
  Ellipse e;
  e.center = mean;
  e.semi_axes = Eigen::Vector2d(std::sqrt(c * lambda(1)), std::sqrt(c * lambda(0)));
  const Eigen::Vector2d major = es.eigenvectors().col(1);
  e.angle = std::atan2(major(1), major(0));
  return e;
}

}  // namespace ics

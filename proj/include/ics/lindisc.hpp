#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ics/model.hpp"

namespace ics {

/// Reference about which the dynamics are linearized. Time is normalized to [0, 1] with
/// physical time t = t0 + sigma * tau and a uniform grid tau_k = k / N.
struct ReferenceTrajectory {
  std::vector<Vec> x_hat;  // N + 1 states
  std::vector<Vec> u_hat;  // N controls, held constant over each interval
  double sigma = 1.0;
  double t0 = 0.0;

  int N() const { return static_cast<int>(u_hat.size()); }
  double dtau() const { return 1.0 / N(); }
  double tau(int k) const { return static_cast<double>(k) / N(); }
  double time(double tau) const { return t0 + sigma * tau; }
};

struct ContinuousLinearization {
  Mat A_tau;
  Mat B_tau;
  Vec r_tau;
};

/// One interval of the discrete system
///   x_{k+1} = A_k x_k + B_k u_k + r_k + sqrt(sigma) G_k w_k,   w_k ~ N(0, I).
/// Sigma_k is the covariance of the full noise term, i.e. sigma * G_k G_k^T.
struct LinearizedStep {
  Mat A;
  Mat B;
  Vec r;
  Mat G;
  Mat Sigma;
};

enum class DiscretizationScheme { exact, first_order };

/// Symmetric positive semidefinite square root by spectral decomposition. Eigenvalues in
/// [-1e-8 |S|_2, 0) are clamped to zero; anything more negative is rejected.
inline Mat psd_sqrt(const Mat& S) {
  detail::require(S.rows() == S.cols(), "psd_sqrt: matrix must be square");
  if (S.size() == 0) return S;
  const double scale = S.cwiseAbs().maxCoeff();
  detail::require((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-8 * (1.0 + scale),
                  "psd_sqrt: matrix must be symmetric");
  const Mat sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  if (es.info() != Eigen::Success) throw NumericalFailure("psd_sqrt: eigendecomposition failed");
  const Vec& lambda = es.eigenvalues();
  const double norm2 = lambda.cwiseAbs().maxCoeff();
  if (lambda.minCoeff() < -1e-8 * norm2) {
    throw NotPsdError("psd_sqrt: minimum eigenvalue " + std::to_string(lambda.minCoeff()) +
                      " is below the PSD tolerance");
  }
  const Vec root = lambda.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

namespace detail {

inline void check_reference(const ModelSpec& model, const ReferenceTrajectory& ref) {
  require(ref.N() >= 1, "reference: N must be >= 1");
  require(ref.sigma > 0.0 && std::isfinite(ref.sigma), "reference: sigma must be > 0");
  require(static_cast<int>(ref.x_hat.size()) == ref.N() + 1,
          "reference: x_hat must hold N + 1 states");
  for (const auto& x : ref.x_hat) require_size(x, model.n_x, "reference state");
  for (const auto& u : ref.u_hat) require_size(u, model.n_u, "reference control");
}

inline void check_step_index(const ReferenceTrajectory& ref, int k) {
  require(k >= 0 && k < ref.N(), "step index " + std::to_string(k) + " out of range");
}

inline ContinuousLinearization linearize_at(const ModelSpec& model, const Vec& x, const Vec& u,
                                            double t, double sigma) {
  ContinuousLinearization lin;
  lin.A_tau = sigma * jacobian_x(model, x, u, t);
  lin.B_tau = sigma * jacobian_u(model, x, u, t);
  lin.r_tau = sigma * drift(model, x, u, t) - lin.A_tau * x - lin.B_tau * u;
  return lin;
}

/// Zero-pads an n_x-by-n_w noise factor to n_x-by-n_x, or takes the PSD root of G G^T when
/// n_w > n_x.
inline Mat square_noise_factor(const Mat& G) {
  const auto n = G.rows();
  if (G.cols() <= n) {
    Mat out = Mat::Zero(n, n);
    out.leftCols(G.cols()) = G;
    return out;
  }
  return psd_sqrt(G * G.transpose());
}

}  // namespace detail

/// Continuous linearization at normalized time tau. The reference state is interpolated
/// linearly between grid points; the control is zero-order held.
inline ContinuousLinearization linearize(const ModelSpec& model, const ReferenceTrajectory& ref,
                                         double tau) {
  detail::check_reference(model, ref);
  detail::require(tau >= 0.0 && tau <= 1.0, "linearize: tau must lie in [0, 1]");
  const int N = ref.N();
  const int k = std::min(static_cast<int>(std::floor(tau * N)), N - 1);
  const double w = tau * N - k;
  const Vec x = (1.0 - w) * ref.x_hat[k] + w * ref.x_hat[k + 1];
  return detail::linearize_at(model, x, ref.u_hat[k], ref.time(tau), ref.sigma);
}

/// Exact zero-order-hold discretization of interval k.
///
/// The reference state inside the interval is integrated from x_hat[k] under u_hat[k], and the
/// transition matrix, the input and affine convolution integrals, and the noise covariance
/// integral are advanced jointly with fixed-step RK4:
///   dPhi = A Phi,  dB = A B + B_tau,  dr = A r + r_tau,  dS = A S + S A^T + G G^T.
inline LinearizedStep discretize_exact(const ModelSpec& model, const ReferenceTrajectory& ref,
                                       int k, int substeps = 10) {
  detail::check_reference(model, ref);
  detail::check_step_index(ref, k);
  detail::require(substeps >= 1, "discretize_exact: substeps must be >= 1");
  const int nx = model.n_x;
  const int nu = model.n_u;
  const double sigma = ref.sigma;
  const Vec& u = ref.u_hat[k];

  struct State {
    Vec x;
    Mat Phi, Bk, S;
    Vec r;
  };
  auto axpy = [](const State& s, double h, const State& d) {
    return State{s.x + h * d.x, s.Phi + h * d.Phi, s.Bk + h * d.Bk, s.S + h * d.S, s.r + h * d.r};
  };
  auto rate = [&](double tau, const State& s) {
    const double t = ref.time(tau);
    const ContinuousLinearization lin = detail::linearize_at(model, s.x, u, t, sigma);
    const Mat G = diffusion(model, t);
    State d;
    d.x = sigma * drift(model, s.x, u, t);
    d.Phi = lin.A_tau * s.Phi;
    d.Bk = lin.A_tau * s.Bk + lin.B_tau;
    d.r = lin.A_tau * s.r + lin.r_tau;
    d.S = lin.A_tau * s.S + s.S * lin.A_tau.transpose() + G * G.transpose();
    return d;
  };

  State s{ref.x_hat[k], Mat::Identity(nx, nx), Mat::Zero(nx, nu), Mat::Zero(nx, nx),
          Vec::Zero(nx)};
  const double h = ref.dtau() / substeps;
  double tau = ref.tau(k);
  for (int i = 0; i < substeps; ++i) {
    const State k1 = rate(tau, s);
    const State k2 = rate(tau + 0.5 * h, axpy(s, 0.5 * h, k1));
    const State k3 = rate(tau + 0.5 * h, axpy(s, 0.5 * h, k2));
    const State k4 = rate(tau + h, axpy(s, h, k3));
    s.x += h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
    s.Phi += h / 6.0 * (k1.Phi + 2.0 * k2.Phi + 2.0 * k3.Phi + k4.Phi);
    s.Bk += h / 6.0 * (k1.Bk + 2.0 * k2.Bk + 2.0 * k3.Bk + k4.Bk);
    s.r += h / 6.0 * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r);
    s.S += h / 6.0 * (k1.S + 2.0 * k2.S + 2.0 * k3.S + k4.S);
    tau += h;
  }
  if (!s.Phi.allFinite() || !s.Bk.allFinite() || !s.r.allFinite() || !s.S.allFinite()) {
    throw NumericalFailure("discretize_exact: non-finite values at step " + std::to_string(k));
  }
  const Mat S = 0.5 * (s.S + s.S.transpose());
  LinearizedStep out;
  out.A = s.Phi;
  out.B = s.Bk;
  out.r = s.r;
  out.G = psd_sqrt(S);
  out.Sigma = sigma * S;
  return out;
}

/// Euler discretization at the left end of interval k.
inline LinearizedStep discretize_first_order(const ModelSpec& model,
                                             const ReferenceTrajectory& ref, int k) {
  detail::check_reference(model, ref);
  detail::check_step_index(ref, k);
  const double dtau = ref.dtau();
  const double t = ref.time(ref.tau(k));
  const ContinuousLinearization lin =
      detail::linearize_at(model, ref.x_hat[k], ref.u_hat[k], t, ref.sigma);
  LinearizedStep out;
  out.A = Mat::Identity(model.n_x, model.n_x) + dtau * lin.A_tau;
  out.B = dtau * lin.B_tau;
  out.r = dtau * lin.r_tau;
  out.G = std::sqrt(dtau) * detail::square_noise_factor(diffusion(model, t));
  out.Sigma = ref.sigma * out.G * out.G.transpose();
  return out;
}

inline std::vector<LinearizedStep> discretize(const ModelSpec& model,
                                              const ReferenceTrajectory& ref,
                                              DiscretizationScheme scheme, int substeps = 10) {
  std::vector<LinearizedStep> steps;
  steps.reserve(ref.N());
  for (int k = 0; k < ref.N(); ++k) {
    steps.push_back(scheme == DiscretizationScheme::exact
                        ? discretize_exact(model, ref, k, substeps)
                        : discretize_first_order(model, ref, k));
  }
  return steps;
}

}  // namespace ics

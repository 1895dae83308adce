#pragma once

#include <algorithm>
#include <functional>
#include <utility>

#include "ics/types.hpp"

namespace ics {

/// Continuous-time stochastic model  dx = f(x, u, t) dt + G(t) dw.
///
/// The Jacobian callbacks are optional. When empty, jacobian_x / jacobian_u fall back to
/// central finite differences. All callbacks must be pure so a model can be shared across
/// threads.
struct ModelSpec {
  int n_x = 0;
  int n_u = 0;
  int n_w = 0;
  std::function<Vec(const Vec& x, const Vec& u, double t)> drift;
  std::function<Mat(const Vec& x, const Vec& u, double t)> jac_x;
  std::function<Mat(const Vec& x, const Vec& u, double t)> jac_u;
  std::function<Mat(double t)> diffusion;
};

/// Parameters of the planar double integrator with quadratic drag.
/// State layout is (position_1, position_2, velocity_1, velocity_2).
struct DragDoubleIntegrator {
  double c_d = 0.0;    // drag coefficient
  double gamma = 0.0;  // noise scale on the velocity channels
};

namespace detail {

inline void check_point(const ModelSpec& model, const Vec& x, const Vec& u) {
  require_size(x, model.n_x, "state");
  require_size(u, model.n_u, "control");
}

inline double fd_step(const Vec& v) {
  const double scale = v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0;
  return 1e-5 * (1.0 + scale);
}

}  // namespace detail

inline Vec drift(const ModelSpec& model, const Vec& x, const Vec& u, double t) {
  detail::check_point(model, x, u);
  Vec f = model.drift(x, u, t);
  detail::require_size(f, model.n_x, "drift output");
  return f;
}

/// Central-difference Jacobian of the drift with respect to the state.
inline Mat finite_difference_jacobian_x(const ModelSpec& model, const Vec& x, const Vec& u,
                                        double t) {
  detail::check_point(model, x, u);
  const double h = detail::fd_step(x);
  Mat J(model.n_x, model.n_x);
  Vec xp = x, xm = x;
  for (int j = 0; j < model.n_x; ++j) {
    xp(j) = x(j) + h;
    xm(j) = x(j) - h;
    J.col(j) = (model.drift(xp, u, t) - model.drift(xm, u, t)) / (2.0 * h);
    xp(j) = xm(j) = x(j);
  }
  return J;
}

/// Central-difference Jacobian of the drift with respect to the control.
inline Mat finite_difference_jacobian_u(const ModelSpec& model, const Vec& x, const Vec& u,
                                        double t) {
  detail::check_point(model, x, u);
  const double h = detail::fd_step(u);
  Mat J(model.n_x, model.n_u);
  Vec up = u, um = u;
  for (int j = 0; j < model.n_u; ++j) {
    up(j) = u(j) + h;
    um(j) = u(j) - h;
    J.col(j) = (model.drift(x, up, t) - model.drift(x, um, t)) / (2.0 * h);
    up(j) = um(j) = u(j);
  }
  return J;
}

inline Mat jacobian_x(const ModelSpec& model, const Vec& x, const Vec& u, double t) {
  detail::check_point(model, x, u);
  if (!model.jac_x) return finite_difference_jacobian_x(model, x, u, t);
  Mat J = model.jac_x(x, u, t);
  detail::require_shape(J, model.n_x, model.n_x, "jacobian_x output");
  return J;
}

inline Mat jacobian_u(const ModelSpec& model, const Vec& x, const Vec& u, double t) {
  detail::check_point(model, x, u);
  if (!model.jac_u) return finite_difference_jacobian_u(model, x, u, t);
  Mat J = model.jac_u(x, u, t);
  detail::require_shape(J, model.n_x, model.n_u, "jacobian_u output");
  return J;
}

inline Mat diffusion(const ModelSpec& model, double t) {
  Mat G = model.diffusion(t);
  detail::require_shape(G, model.n_x, model.n_w, "diffusion output");
  return G;
}

/// Relative Frobenius error between an analytic Jacobian and its finite-difference estimate.
inline double jacobian_relative_error(const Mat& analytic, const Mat& numeric) {
  return (analytic - numeric).norm() / std::max(1.0, analytic.norm());
}

/// dx = (A x + B u) dt + G dw with constant matrices.
inline ModelSpec make_linear_model(Mat A, Mat B, Mat G) {
  detail::require(A.rows() == A.cols(), "linear model: A must be square");
  detail::require(B.rows() == A.rows(), "linear model: B row count must match A");
  detail::require(G.rows() == A.rows(), "linear model: G row count must match A");
  ModelSpec m;
  m.n_x = static_cast<int>(A.rows());
  m.n_u = static_cast<int>(B.cols());
  m.n_w = static_cast<int>(G.cols());
  m.drift = [A, B](const Vec& x, const Vec& u, double) -> Vec { return A * x + B * u; };
  m.jac_x = [A](const Vec&, const Vec&, double) -> Mat { return A; };
  m.jac_u = [B](const Vec&, const Vec&, double) -> Mat { return B; };
  m.diffusion = [G](double) -> Mat { return G; };
  return m;
}

/// A = [0 I; 0 0] and B = [0; I] of the planar double integrator.
inline std::pair<Mat, Mat> double_integrator_matrices() {
  Mat A = Mat::Zero(4, 4);
  A.block(0, 2, 2, 2).setIdentity();
  Mat B = Mat::Zero(4, 2);
  B.block(2, 0, 2, 2).setIdentity();
  return {A, B};
}

/// Planar double integrator with quadratic drag:
///   d(xi) = v dt,   dv = (u - c_d |v| v) dt + gamma dw.
inline ModelSpec make_drag_double_integrator(const DragDoubleIntegrator& p) {
  detail::require(p.c_d >= 0.0 && std::isfinite(p.c_d), "drag model: c_d must be >= 0");
  detail::require(p.gamma >= 0.0 && std::isfinite(p.gamma), "drag model: gamma must be >= 0");
  const double c_d = p.c_d;
  const double gamma = p.gamma;
  ModelSpec m;
  m.n_x = 4;
  m.n_u = 2;
  m.n_w = 2;
  m.drift = [c_d](const Vec& x, const Vec& u, double) -> Vec {
    const Eigen::Vector2d v = x.segment<2>(2);
    Vec f(4);
    f.head<2>() = v;
    f.tail<2>() = u - c_d * v.norm() * v;
    return f;
  };
  m.jac_x = [c_d](const Vec& x, const Vec&, double) -> Mat {
    Mat J = Mat::Zero(4, 4);
    J.block(0, 2, 2, 2).setIdentity();
    const Eigen::Vector2d v = x.segment<2>(2);
    const double speed = v.norm();
    // The drag term is C^1 with zero derivative at rest.
    if (speed > 0.0) {
      J.block(2, 2, 2, 2) =
          -c_d * (v * v.transpose() / speed + speed * Eigen::Matrix2d::Identity());
    }
    return J;
  };
  m.jac_u = [](const Vec&, const Vec&, double) -> Mat {
    Mat J = Mat::Zero(4, 2);
    J.block(2, 0, 2, 2).setIdentity();
    return J;
  };
  m.diffusion = [gamma](double) -> Mat {
    Mat G = Mat::Zero(4, 2);
    G.block(2, 0, 2, 2) = gamma * Eigen::Matrix2d::Identity();
    return G;
  };
  return m;
}

}  // namespace ics

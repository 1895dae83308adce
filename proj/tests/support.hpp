#pragma once

#include <random>
#include <vector>

#include "ics/ics.hpp"

namespace support {

using ics::Mat;
using ics::Vec;

inline Mat randm(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> g;
  Mat M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = scale * g(rng);
  return M;
}

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

/// Planar double integrator steered from rest-ish to a target over a short horizon.
struct Toy {
  ics::ModelSpec model;
  ics::CSProblemSpec spec;
  ics::ReferenceTrajectory ref;
  std::vector<ics::LinearizedStep> steps;
  ics::BlockSystem bs;
  double sigma = 5.0;
};

inline Toy make_toy(int N = 8, double gamma = 0.05, double c_d = 0.0) {
  Toy t;
  t.model = ics::make_drag_double_integrator({c_d, gamma});
  auto& s = t.spec;
  s.x0_mean = vec({0, 0, 0.5, 0});
  s.P_x0 = 0.01 * Mat::Identity(4, 4);
  s.xf_mean = vec({3, 1, 0, 0});
  s.P_xf = 0.05 * Mat::Identity(4, 4);
  s.weights = ics::assemble_cost_weights(std::vector<Mat>(N, Mat::Identity(4, 4)),
                                         std::vector<Mat>(N, Mat::Identity(2, 2)), t.sigma, N);
  s.mean_cost.S_u = Mat::Identity(2, 2);
  s.state_constraints.assign(N + 1, {});
  s.control_constraints.assign(N, {});
  for (int k = 1; k <= N; ++k) s.state_constraints[k].push_back({-Vec::Unit(4, 1), 0.3, 0.05});
  t.ref.sigma = t.sigma;
  t.ref.u_hat.assign(N, Vec::Zero(2));
  t.ref.x_hat = ics::propagate_mean(t.model, t.ref.u_hat, s.x0_mean, t.sigma);
  t.steps = ics::discretize(t.model, t.ref, ics::DiscretizationScheme::exact);
  t.bs = ics::assemble(t.steps, t.sigma, s.P_x0);
  return t;
}

/// The drag double integrator example: c_d = 0.005, gamma = 0.01, N = 25, sigma = 15.
struct DragExample {
  ics::ModelSpec model;
  ics::CSProblemSpec spec;
  std::vector<Vec> guess;
  double sigma = 15.0;
};

inline DragExample make_drag_example(double c_d = 0.005) {
  const int N = 25;
  DragExample e;
  e.model = ics::make_drag_double_integrator({c_d, 0.01});
  auto& s = e.spec;
  s.x0_mean = vec({1, 8, 2, 0});
  s.P_x0 = 0.01 * Mat::Identity(4, 4);
  s.xf_mean = vec({1, 2, -1, 0});
  s.P_xf = 0.1 * Mat::Identity(4, 4);
  s.weights = ics::assemble_cost_weights(std::vector<Mat>(N, 5.0 * Mat::Identity(4, 4)),
                                         std::vector<Mat>(N, Mat::Identity(2, 2)), e.sigma, N);
  s.mean_cost.S_u = std::sqrt(10.0) * Mat::Identity(2, 2);
  s.w_xf = 1000.0;
  s.state_constraints.assign(N + 1, {});
  s.control_constraints.assign(N, {});
  const auto risks = ics::allocate_risk(0.1, 2);
  for (int k = 1; k <= N; ++k) {
    s.state_constraints[k].push_back({Vec::Unit(4, 0), 6.0, risks[0]});
    s.state_constraints[k].push_back({-Vec::Unit(4, 0), 6.0, risks[1]});
  }
  e.guess.assign(N, vec({-0.3, -0.1}));
  return e;
}

}  // namespace support

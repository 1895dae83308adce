#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "ics/blocks.hpp"
#include "ics/conic/program.hpp"
#include "ics/quantile.hpp"

namespace ics {

/// Half-space {x : normal^T x <= offset} to be satisfied with probability at least 1 - risk.
struct HalfSpace {
  Vec normal;
  double offset = 0.0;
  double risk = 0.05;
};

enum class TerminalMode { soft, hard };

inline const char* to_string(TerminalMode m) { return m == TerminalMode::soft ? "soft" : "hard"; }

/// Supported mean-cost family, applied at every step k = 0, ..., N-1:
///   l(x, u) = |S_u u|^2 + |S_x (x - x_ref)|^2 + q_u^T u + q_x^T x.
/// Any member may be left empty.
struct MeanCost {
  Mat S_u;
  Mat S_x;
  Vec x_ref;
  Vec q_u;
  Vec q_x;
};

/// Componentwise stochastic trust region around the reference.
struct TrustRegion {
  double delta_x = 5.0;
  double delta_u = 0.5;
  double p_tr_x = 0.1;
  double p_tr_u = 0.1;
};

/// Geometric relaxation of chance-constraint offsets over the first iterations.
struct Relaxation {
  int n_relax = 5;
  double rho = 0.5;
};

struct CSProblemSpec {
  Vec x0_mean;
  Mat P_x0;
  Vec xf_mean;
  Mat P_xf;
  std::vector<std::vector<HalfSpace>> state_constraints;    // N + 1 lists, indexed by step
  std::vector<std::vector<HalfSpace>> control_constraints;  // N lists
  std::vector<double> state_risk_budget;                    // optional, N + 1 entries
  std::vector<double> control_risk_budget;                  // optional, N entries
  MeanCost mean_cost;
  CostWeights weights;
  TerminalMode terminal_mode = TerminalMode::soft;
  double w_xf = 1000.0;
  TrustRegion trust_region;
  Relaxation relaxation;

  int N() const { return static_cast<int>(weights.Qu_blocks.size()); }
  int n_x() const { return static_cast<int>(x0_mean.size()); }

  void validate(int n_u) const;
};

/// Feedforward-plus-feedback policy u_k = v_k + K_k y_k.
struct Policy {
  Vec V;                     // N n_u
  std::vector<Mat> K_blocks; // N gains, n_u x n_x

  int N() const { return static_cast<int>(K_blocks.size()); }
  int n_u() const { return K_blocks.empty() ? 0 : static_cast<int>(K_blocks.front().rows()); }
  int n_x() const { return K_blocks.empty() ? 0 : static_cast<int>(K_blocks.front().cols()); }
  Vec v(int k) const { return V.segment(k * n_u(), n_u()); }
  Mat K() const { return stack_feedback(K_blocks, n_x()); }
};

inline Policy zero_feedback_policy(const std::vector<Vec>& u, int n_x) {
  Policy p;
  const int N = static_cast<int>(u.size());
  const int nu = N > 0 ? static_cast<int>(u.front().size()) : 0;
  p.V.resize(N * nu);
  for (int k = 0; k < N; ++k) {
    p.V.segment(k * nu, nu) = u[k];
    p.K_blocks.push_back(Mat::Zero(nu, n_x));
  }
  return p;
}

/// Splits V and the block feedback matrix [blkdiag(K_0..K_{N-1}), 0] into per-step terms.
inline Policy reshape_policy(const Vec& V, const Mat& K, int N, int n_x, int n_u) {
  detail::require(N >= 1, "reshape_policy: N must be >= 1");
  detail::require_size(V, N * n_u, "reshape_policy: V");
  detail::require_shape(K, N * n_u, (N + 1) * n_x, "reshape_policy: K");
  Policy p;
  p.V = V;
  Mat rest = K;
  for (int k = 0; k < N; ++k) {
    p.K_blocks.push_back(K.block(k * n_u, k * n_x, n_u, n_x));
    rest.block(k * n_u, k * n_x, n_u, n_x).setZero();
  }
  if (rest.size() > 0 && rest.cwiseAbs().maxCoeff() != 0.0) {
    throw ConsistencyError("reshape_policy: K has entries outside its block diagonal");
  }
  return p;
}

/// Uniform split of a risk budget over M half-spaces.
inline std::vector<double> allocate_risk(double p_total, int M) {
  detail::require(p_total > 0.0 && p_total < 0.5, "allocate_risk: total risk must lie in (0, 0.5)");
  detail::require(M >= 1, "allocate_risk: need at least one half-space");
  return std::vector<double>(M, p_total / M);
}

inline void CSProblemSpec::validate(int n_u) const {
  const int N = this->N();
  const int nx = n_x();
  detail::require(N >= 1, "problem: N must be >= 1");
  detail::require(nx >= 1, "problem: x0_mean must be non-empty");
  detail::require_shape(P_x0, nx, nx, "problem: P_x0");
  detail::require_size(xf_mean, nx, "problem: xf_mean");
  detail::require_shape(P_xf, nx, nx, "problem: P_xf");
  detail::require_psd(P_x0, "problem: P_x0");
  detail::require_psd(P_xf, "problem: P_xf");
  if (detail::min_eigenvalue(P_xf) <= 0.0) {
    throw InvalidArgument("problem: P_xf must be positive definite");
  }
  detail::require(w_xf > 0.0 && std::isfinite(w_xf), "problem: w_xf must be > 0");
  detail::require(static_cast<int>(weights.Qx_blocks.size()) == N + 1,
                  "problem: weights must hold N + 1 state blocks");
  for (const auto& q : weights.Qx_blocks) detail::require_shape(q, nx, nx, "problem: Qx block");
  for (const auto& q : weights.Qu_blocks) detail::require_shape(q, n_u, n_u, "problem: Qu block");
  detail::require(static_cast<int>(state_constraints.size()) == N + 1,
                  "problem: state_constraints must hold N + 1 lists");
  detail::require(static_cast<int>(control_constraints.size()) == N,
                  "problem: control_constraints must hold N lists");
  auto check_list = [](const std::vector<HalfSpace>& list, int dim, const std::string& tag,
                       double budget) {
    double total = 0.0;
    for (const auto& h : list) {
      detail::require_size(h.normal, dim, tag + " normal");
      detail::require(h.normal.norm() > 0.0, tag + " normal must be nonzero");
      detail::require(std::isfinite(h.offset), tag + " offset must be finite");
      detail::require(h.risk > 0.0 && h.risk < 0.5, tag + " risk must lie in (0, 0.5)");
      total += h.risk;
    }
    if (budget > 0.0) {
      detail::require(total <= budget * (1.0 + 1e-12), tag + " risks exceed the step budget");
    }
  };
  for (int k = 0; k <= N; ++k) {
    const double budget = state_risk_budget.empty() ? 0.0 : state_risk_budget.at(k);
    check_list(state_constraints[k], nx, "state constraint at step " + std::to_string(k), budget);
  }
  for (int k = 0; k < N; ++k) {
    const double budget = control_risk_budget.empty() ? 0.0 : control_risk_budget.at(k);
    check_list(control_constraints[k], n_u, "control constraint at step " + std::to_string(k),
               budget);
  }
  const auto& mc = mean_cost;
  if (mc.S_u.size()) detail::require(mc.S_u.cols() == n_u, "mean cost: S_u must have n_u columns");
  if (mc.S_x.size()) {
    detail::require(mc.S_x.cols() == nx, "mean cost: S_x must have n_x columns");
    detail::require_size(mc.x_ref, nx, "mean cost: x_ref");
  }
  if (mc.q_u.size()) detail::require_size(mc.q_u, n_u, "mean cost: q_u");
  if (mc.q_x.size()) detail::require_size(mc.q_x, nx, "mean cost: q_x");
  const auto& tr = trust_region;
  detail::require(tr.delta_x > 0.0 && tr.delta_u > 0.0, "trust region: radii must be > 0");
  detail::require(tr.p_tr_x > 0.0 && tr.p_tr_x < 1.0 && tr.p_tr_u > 0.0 && tr.p_tr_u < 1.0,
                  "trust region: risks must lie in (0, 1)");
  detail::require(relaxation.n_relax >= 0, "relaxation: n_relax must be >= 0");
  detail::require(relaxation.rho > 0.0 && relaxation.rho <= 1.0,
                  "relaxation: rho must lie in (0, 1]");
}

// ---------------------------------------------------------------------------------------------
// Symbolic rows over the core variables z = (V, vec K_0, ..., vec K_{N-1}, eta).

/// Index map of the core variables. Each K_k is stored row-major.
struct VariableLayout {
  int N = 0;
  int n_x = 0;
  int n_u = 0;

  int v(int k, int i) const { return k * n_u + i; }
  int K(int k, int i, int c) const { return N * n_u + (k * n_u + i) * n_x + c; }
  int eta() const { return N * n_u * (1 + n_x); }
  int core() const { return eta() + 1; }
};

inline VariableLayout layout_of(const BlockSystem& bs) { return {bs.N, bs.n_x, bs.n_u}; }

struct AffineExpr {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  void add(int idx, double val) {
    if (val != 0.0) terms.emplace_back(idx, val);
  }
  double evaluate(const Vec& z) const {
    double out = constant;
    for (const auto& [i, v] : terms) out += v * z(i);
    return out;
  }
};

/// Stands for |F^T (I + Bcal K)^T E_k^T d| (state) or |F^T K^T E^u_k^T d| (control), where
/// F F^T = Py. Directions are unit length with the first nonzero entry positive, so equal keys
/// denote equal norms.
struct NormKey {
  bool control = false;
  int k = 0;
  std::vector<double> direction;

  bool operator<(const NormKey& o) const {
    return std::tie(control, k, direction) < std::tie(o.control, o.k, o.direction);
  }
};

/// Returns the canonical key for direction a and the scale |a| with |F^T ... a| ~= |a| * norm(key).
inline std::pair<NormKey, double> make_norm_key(bool control, int k, const Vec& a) {
  const double s = a.norm();
  detail::require(s > 0.0, "norm term needs a nonzero direction");
  Vec d = a / s;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d(i) != 0.0) {
      if (d(i) < 0.0) d = -d;
      break;
    }
  }
  // Snap to a 2^-40 grid so directions differing only by rounding share a key.
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = std::ldexp(std::round(std::ldexp(d(i), 40)), -40);
  NormKey key{control, k, std::vector<double>(d.data(), d.data() + d.size())};
  return {key, s};
}

/// expr + sum coef_i * norm_i <= 0, coef_i >= 0.
struct ChanceRow {
  AffineExpr expr;
  std::vector<std::pair<NormKey, double>> norms;
};

struct ProgramPart {
  std::string name;
  std::vector<AffineExpr> equalities;
  std::vector<ChanceRow> inequalities;
  std::vector<std::vector<AffineExpr>> socs;
  std::vector<std::vector<AffineExpr>> psds;  // scaled vectorizations
};

/// scale * (linear + sum squares_i^2 + sum w_j norm_j^2) + eta_weight * eta.
struct CostPart {
  double scale = 1.0;
  AffineExpr linear;
  std::vector<AffineExpr> squares;
  std::vector<std::pair<NormKey, double>> norm_squares;
  double eta_weight = 0.0;
};

struct ProgramParts {
  VariableLayout layout;
  CostPart cost;
  std::vector<ProgramPart> constraints;
};

namespace detail {

/// Block lower-triangular factor F = [Acal P_x0^{1/2}, sqrt(sigma) Gcal] of Py with all-zero
/// columns removed. Column block 0 touches every step, noise block j only steps > j.
inline Mat noise_factor(const BlockSystem& bs) {
  Mat F(bs.state_dim(), bs.n_x + bs.Gcal.cols());
  F.leftCols(bs.n_x) = bs.Acal * psd_sqrt(bs.P_x0);
  F.rightCols(bs.Gcal.cols()) = std::sqrt(bs.sigma) * bs.Gcal;
  std::vector<int> keep;
  for (int c = 0; c < F.cols(); ++c) {
    if (F.col(c).cwiseAbs().maxCoeff() > 0.0) keep.push_back(c);
  }
  return F(Eigen::all, keep);
}

/// a^T E_k (Acal x0 + Bcal V + Rvec).
inline AffineExpr mean_row(const BlockSystem& bs, const VariableLayout& L, const Vec& x0, int k,
                           const Vec& a) {
  AffineExpr e;
  const auto rows = Eigen::seqN(k * bs.n_x, bs.n_x);
  e.constant = a.dot(bs.Acal(rows, Eigen::all) * x0 + bs.Rvec(rows));
  const Vec g = bs.Bcal(rows, Eigen::all).transpose() * a;
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < bs.n_u; ++i) e.add(L.v(j, i), g(j * bs.n_u + i));
  return e;
}

/// F^T (I + Bcal K)^T E_k^T d or F^T K^T E^u_k^T d as affine vectors in K.
inline std::vector<AffineExpr> norm_argument(const BlockSystem& bs, const VariableLayout& L,
                                             const Mat& F, const NormKey& key) {
  const int nx = bs.n_x, nu = bs.n_u;
  const Vec d = Eigen::Map<const Vec>(key.direction.data(), key.direction.size());
  std::vector<AffineExpr> out(F.cols());
  if (!key.control) {
    const auto rows = Eigen::seqN(key.k * nx, nx);
    const Vec base = F(rows, Eigen::all).transpose() * d;
    const Vec g = bs.Bcal(rows, Eigen::all).transpose() * d;
    for (int r = 0; r < F.cols(); ++r) {
      out[r].constant = base(r);
      for (int j = 0; j < key.k; ++j) {
        for (int c = 0; c < nx; ++c) {
          const double f = F(j * nx + c, r);
          if (f == 0.0) continue;
          for (int i = 0; i < nu; ++i) out[r].add(L.K(j, i, c), f * g(j * nu + i));
        }
      }
    }
  } else {
    for (int r = 0; r < F.cols(); ++r) {
      for (int c = 0; c < nx; ++c) {
        const double f = F(key.k * nx + c, r);
        if (f == 0.0) continue;
        for (int i = 0; i < nu; ++i) out[r].add(L.K(key.k, i, c), f * d(i));
      }
    }
  }
  std::vector<AffineExpr> pruned;
  for (auto& e : out) {
    if (!e.terms.empty() || e.constant != 0.0) pruned.push_back(std::move(e));
  }
  return pruned;
}

inline Vec core_vector(const VariableLayout& L, const Policy& p, double eta) {
  Vec z = Vec::Zero(L.core());
  z.head(L.N * L.n_u) = p.V;
  for (int k = 0; k < L.N; ++k)
    for (int i = 0; i < L.n_u; ++i)
      for (int c = 0; c < L.n_x; ++c) z(L.K(k, i, c)) = p.K_blocks[k](i, c);
  z(L.eta()) = eta;
  return z;
}

}  // namespace detail

/// Exact value of a norm term at a policy.
inline double norm_value(const BlockSystem& bs, const NormKey& key, const Policy& p) {
  const Vec d = Eigen::Map<const Vec>(key.direction.data(), key.direction.size());
  if (!key.control) {
    Vec w = Vec::Zero(bs.state_dim());
    w.segment(key.k * bs.n_x, bs.n_x) = d;
    const Vec g = bs.Bcal.middleRows(key.k * bs.n_x, bs.n_x).transpose() * d;
    for (int j = 0; j < bs.N; ++j) {
      w.segment(j * bs.n_x, bs.n_x) += p.K_blocks[j].transpose() * g.segment(j * bs.n_u, bs.n_u);
    }
    return std::sqrt(std::max(0.0, w.dot(bs.Py * w)));
  }
  Vec w = Vec::Zero(bs.state_dim());
  w.segment(key.k * bs.n_x, bs.n_x) = p.K_blocks[key.k].transpose() * d;
  return std::sqrt(std::max(0.0, w.dot(bs.Py * w)));
}

inline double chance_row_value(const BlockSystem& bs, const ChanceRow& row, const Policy& p,
                               double eta = 0.0) {
  const Vec z = detail::core_vector(layout_of(bs), p, eta);
  double v = row.expr.evaluate(z);
  for (const auto& [key, coef] : row.norms) v += coef * norm_value(bs, key, p);
  return v;
}

// ---------------------------------------------------------------------------------------------
// Builders.

/// (sigma/N) [L(V) + tr(((I+Bcal K)^T Qx (I+Bcal K) + K^T Qu K) Py)] + w_xf eta.
/// The trace is a sum of squared norm terms along the rows of Qx_k^{1/2} and Qu_k^{1/2}.
inline CostPart build_cost(const BlockSystem& bs, const CSProblemSpec& spec) {
  const VariableLayout L = layout_of(bs);
  const int N = bs.N, nx = bs.n_x, nu = bs.n_u;
  const auto& mc = spec.mean_cost;
  CostPart cost;
  cost.scale = spec.weights.scale;
  cost.eta_weight = spec.terminal_mode == TerminalMode::soft ? spec.w_xf : 0.0;
  for (int k = 0; k < N; ++k) {
    for (Eigen::Index r = 0; r < mc.S_u.rows(); ++r) {
      AffineExpr e;
      for (int i = 0; i < nu; ++i) e.add(L.v(k, i), mc.S_u(r, i));
      cost.squares.push_back(std::move(e));
    }
    for (Eigen::Index r = 0; r < mc.S_x.rows(); ++r) {
      const Vec a = mc.S_x.row(r).transpose();
      AffineExpr e = detail::mean_row(bs, L, spec.x0_mean, k, a);
      e.constant -= a.dot(mc.x_ref);
      cost.squares.push_back(std::move(e));
    }
    if (mc.q_u.size()) {
      for (int i = 0; i < nu; ++i) cost.linear.add(L.v(k, i), mc.q_u(i));
    }
    if (mc.q_x.size()) {
      const AffineExpr e = detail::mean_row(bs, L, spec.x0_mean, k, mc.q_x);
      cost.linear.constant += e.constant;
      cost.linear.terms.insert(cost.linear.terms.end(), e.terms.begin(), e.terms.end());
    }
  }
  for (int k = 0; k <= N; ++k) {
    const Mat& Q = spec.weights.Qx_blocks[k];
    if (Q.size() == 0 || Q.cwiseAbs().maxCoeff() == 0.0) continue;
    const Mat R = psd_sqrt(Q);
    for (int r = 0; r < nx; ++r) {
      const Vec a = R.row(r).transpose();
      if (a.norm() == 0.0) continue;
      auto [key, s] = make_norm_key(false, k, a);
      cost.norm_squares.emplace_back(std::move(key), s * s);
    }
  }
  for (int k = 0; k < N; ++k) {
    const Mat& Q = spec.weights.Qu_blocks[k];
    if (Q.size() == 0 || Q.cwiseAbs().maxCoeff() == 0.0) continue;
    const Mat R = psd_sqrt(Q);
    for (int r = 0; r < nu; ++r) {
      const Vec a = R.row(r).transpose();
      if (a.norm() == 0.0) continue;
      auto [key, s] = make_norm_key(true, k, a);
      cost.norm_squares.emplace_back(std::move(key), s * s);
    }
  }
  return cost;
}

/// Closed-form value of the cost of build_cost at a policy, with eta set to the terminal-mean
/// error in soft mode.
inline double evaluate_cost(const BlockSystem& bs, const CSProblemSpec& spec, const Policy& p) {
  const int N = bs.N, nx = bs.n_x, nu = bs.n_u;
  const auto& mc = spec.mean_cost;
  const Vec X = state_mean(bs, spec.x0_mean, p.V);
  double ell = 0.0;
  for (int k = 0; k < N; ++k) {
    const Vec u = p.V.segment(k * nu, nu);
    const Vec x = X.segment(k * nx, nx);
    if (mc.S_u.size()) ell += (mc.S_u * u).squaredNorm();
    if (mc.S_x.size()) ell += (mc.S_x * (x - mc.x_ref)).squaredNorm();
    if (mc.q_u.size()) ell += mc.q_u.dot(u);
    if (mc.q_x.size()) ell += mc.q_x.dot(x);
  }
  const Mat K = p.K();
  const Mat Px = state_covariance(bs, K);
  const Mat Pu = control_covariance(bs, K);
  const double trace = (spec.weights.Qx() * Px).trace() + (spec.weights.Qu() * Pu).trace();
  double total = spec.weights.scale * (ell + trace);
  if (spec.terminal_mode == TerminalMode::soft) {
    total += spec.w_xf * (X.tail(nx) - spec.xf_mean).norm();
  }
  return total;
}

/// Hard: E_N Xbar = xf. Soft: |E_N Xbar - xf| <= eta.
inline ProgramPart build_terminal_mean(const BlockSystem& bs, const CSProblemSpec& spec,
                                       TerminalMode mode) {
  const VariableLayout L = layout_of(bs);
  ProgramPart part;
  part.name = "terminal_mean";
  std::vector<AffineExpr> err;
  for (int i = 0; i < bs.n_x; ++i) {
    AffineExpr e = detail::mean_row(bs, L, spec.x0_mean, bs.N, Vec::Unit(bs.n_x, i));
    e.constant -= spec.xf_mean(i);
    err.push_back(std::move(e));
  }
  if (mode == TerminalMode::hard) {
    part.equalities = std::move(err);
    AffineExpr eta;
    eta.add(L.eta(), 1.0);
    part.equalities.push_back(std::move(eta));
  } else {
    std::vector<AffineExpr> cone;
    AffineExpr eta;
    eta.add(L.eta(), 1.0);
    cone.push_back(std::move(eta));
    for (auto& e : err) cone.push_back(std::move(e));
    part.socs.push_back(std::move(cone));
  }
  return part;
}

/// [[P_xf, Z], [Z^T, I]] in the PSD cone with Z = E_N (I + Bcal K) F, F F^T = Py.
inline ProgramPart build_terminal_cov(const BlockSystem& bs, const CSProblemSpec& spec) {
  detail::require_shape(spec.P_xf, bs.n_x, bs.n_x, "terminal covariance: P_xf");
  if (detail::min_eigenvalue(spec.P_xf) <= 0.0) {
    throw InvalidArgument("terminal covariance: P_xf must be positive definite");
  }
  const VariableLayout L = layout_of(bs);
  const Mat F = detail::noise_factor(bs);
  const int nx = bs.n_x, nu = bs.n_u, N = bs.N;
  const int r = static_cast<int>(F.cols());
  const int d = nx + r;
  std::vector<AffineExpr> vec(d * (d + 1) / 2);
  for (int j = 0; j < nx; ++j)
    for (int i = j; i < nx; ++i)
      vec[conic::svec_index(d, i, j)].constant =
          (i == j ? 1.0 : std::numbers::sqrt2) * 0.5 * (spec.P_xf(i, j) + spec.P_xf(j, i));
  for (int c = 0; c < r; ++c) vec[conic::svec_index(d, nx + c, nx + c)].constant = 1.0;
  const auto last = Eigen::seqN(N * nx, nx);
  const Mat BN = bs.Bcal(last, Eigen::all);
  for (int a = 0; a < nx; ++a) {
    for (int c = 0; c < r; ++c) {
      AffineExpr& e = vec[conic::svec_index(d, nx + c, a)];
      e.constant = std::numbers::sqrt2 * F(N * nx + a, c);
      for (int j = 0; j < N; ++j) {
        for (int cc = 0; cc < nx; ++cc) {
          const double f = F(j * nx + cc, c);
          if (f == 0.0) continue;
          for (int i = 0; i < nu; ++i) {
            e.add(L.K(j, i, cc), std::numbers::sqrt2 * BN(a, j * nu + i) * f);
          }
        }
      }
    }
  }
  ProgramPart part;
  part.name = "terminal_cov";
  part.psds.push_back(std::move(vec));
  return part;
}

namespace detail {

inline ChanceRow state_chance_row(const BlockSystem& bs, const VariableLayout& L, const Vec& x0,
                                  int k, const Vec& a, double offset, double risk) {
  ChanceRow row;
  row.expr = mean_row(bs, L, x0, k, a);
  row.expr.constant -= offset;
  auto [key, s] = make_norm_key(false, k, a);
  row.norms.emplace_back(std::move(key), inverse_normal_cdf(1.0 - risk) * s);
  return row;
}

inline ChanceRow control_chance_row(const VariableLayout& L, int k, const Vec& b, double offset,
                                    double risk) {
  ChanceRow row;
  for (int i = 0; i < L.n_u; ++i) row.expr.add(L.v(k, i), b(i));
  row.expr.constant = -offset;
  auto [key, s] = make_norm_key(true, k, b);
  row.norms.emplace_back(std::move(key), inverse_normal_cdf(1.0 - risk) * s);
  return row;
}

}  // namespace detail

/// Deterministic reformulation of every half-space chance constraint:
///   a^T E_k Xbar - alpha + Phi^{-1}(1 - p) |F^T (I + Bcal K)^T E_k^T a| <= 0
///   b^T v_k - beta + Phi^{-1}(1 - p) |F^T K^T E^u_k^T b| <= 0
/// Positive offsets are multiplied by relax_scale >= 1.
inline ProgramPart build_chance_constraints(const BlockSystem& bs, const CSProblemSpec& spec,
                                            double relax_scale = 1.0) {
  detail::require(relax_scale >= 1.0, "chance constraints: relaxation scale must be >= 1");
  const VariableLayout L = layout_of(bs);
  auto relaxed = [&](double alpha) { return alpha > 0.0 ? relax_scale * alpha : alpha; };
  ProgramPart part;
  part.name = "chance";
  for (int k = 0; k <= bs.N; ++k) {
    for (const auto& h : spec.state_constraints[k]) {
      if (h.risk >= 0.5) throw InvalidArgument("chance constraint risk must be < 0.5");
      part.inequalities.push_back(
          detail::state_chance_row(bs, L, spec.x0_mean, k, h.normal, relaxed(h.offset), h.risk));
    }
  }
  for (int k = 0; k < bs.N; ++k) {
    for (const auto& h : spec.control_constraints[k]) {
      if (h.risk >= 0.5) throw InvalidArgument("chance constraint risk must be < 0.5");
      part.inequalities.push_back(
          detail::control_chance_row(L, k, h.normal, relaxed(h.offset), h.risk));
    }
  }
  return part;
}

/// P(|x_{k,j} - xhat_{k,j}| <= delta_x) and P(|u_{k,j} - uhat_{k,j}| <= delta_u) as 2 n rows per
/// step, each at risk p_tr / (2 n). State rows cover k = 1..N since x_0 is fixed by the data.
inline ProgramPart build_trust_region(const BlockSystem& bs, const CSProblemSpec& spec,
                                      const ReferenceTrajectory& ref) {
  const VariableLayout L = layout_of(bs);
  const auto& tr = spec.trust_region;
  detail::require(tr.delta_x > 0.0 && tr.delta_u > 0.0, "trust region: radii must be > 0");
  detail::require(ref.N() == bs.N, "trust region: reference length must match N");
  const int nx = bs.n_x, nu = bs.n_u;
  const double px = tr.p_tr_x / (2.0 * nx);
  const double pu = tr.p_tr_u / (2.0 * nu);
  ProgramPart part;
  part.name = "trust_region";
  for (int k = 1; k <= bs.N; ++k) {
    for (int j = 0; j < nx; ++j) {
      for (double sgn : {1.0, -1.0}) {
        const Vec a = sgn * Vec::Unit(nx, j);
        part.inequalities.push_back(detail::state_chance_row(
            bs, L, spec.x0_mean, k, a, tr.delta_x + sgn * ref.x_hat[k](j), px));
      }
    }
  }
  for (int k = 0; k < bs.N; ++k) {
    for (int j = 0; j < nu; ++j) {
      for (double sgn : {1.0, -1.0}) {
        const Vec b = sgn * Vec::Unit(nu, j);
        part.inequalities.push_back(
            detail::control_chance_row(L, k, b, tr.delta_u + sgn * ref.u_hat[k](j), pu));
      }
    }
  }
  return part;
}

/// Collects every part of the convex subproblem in the canonical order: terminal, chance
/// (state then control, by step), trust region, terminal covariance.
inline ProgramParts build_subproblem(const BlockSystem& bs, const CSProblemSpec& spec,
                                     const ReferenceTrajectory& ref, TerminalMode mode,
                                     double relax_scale = 1.0, bool with_trust_region = true) {
  CSProblemSpec s = spec;
  s.terminal_mode = mode;
  ProgramParts parts;
  parts.layout = layout_of(bs);
  parts.cost = build_cost(bs, s);
  parts.constraints.push_back(build_terminal_mean(bs, s, mode));
  parts.constraints.push_back(build_chance_constraints(bs, s, relax_scale));
  if (with_trust_region) parts.constraints.push_back(build_trust_region(bs, s, ref));
  parts.constraints.push_back(build_terminal_cov(bs, s));
  return parts;
}

// ---------------------------------------------------------------------------------------------
// Lowering.

struct RowSection {
  std::string name;
  int begin = 0;
  int end = 0;
};

/// Canonical conic form of the subproblem with the map back to the core variables.
/// Variables: core (V, K, eta), then the cost epigraph tau, then one auxiliary per norm term.
struct LoweredProblem {
  conic::ConicProgram program;
  VariableLayout layout;
  int tau_index = 0;
  int atom_offset = 0;
  std::vector<NormKey> atoms;
  double objective_constant = 0.0;
  std::vector<RowSection> sections;

  int num_variables() const { return program.num_variables(); }
  double objective(const Vec& z) const { return program.c.dot(z) + objective_constant; }
  double eta(const Vec& z) const { return z(layout.eta()); }

  Policy extract_policy(const Vec& z) const {
    detail::require(z.size() == program.num_variables(), "extract_policy: wrong length");
    const auto& L = layout;
    Policy p;
    p.V = z.head(L.N * L.n_u);
    for (int k = 0; k < L.N; ++k) {
      Mat Kk(L.n_u, L.n_x);
      for (int i = 0; i < L.n_u; ++i)
        for (int c = 0; c < L.n_x; ++c) Kk(i, c) = z(L.K(k, i, c));
      p.K_blocks.push_back(Kk);
    }
    return p;
  }

  /// Core variables of a policy followed by consistent auxiliaries, usable as a warm start.
  Vec lift(const BlockSystem& bs, const Policy& p, double eta_value) const {
    Vec z = Vec::Zero(program.num_variables());
    z.head(layout.core()) = detail::core_vector(layout, p, eta_value);
    for (std::size_t a = 0; a < atoms.size(); ++a) {
      z(atom_offset + static_cast<int>(a)) = norm_value(bs, atoms[a], p);
    }
    z(tau_index) = 0.0;
    return z;
  }

  const RowSection* section(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
};

namespace detail {

class Lowering {
 public:
  Lowering(const BlockSystem& bs, const ProgramParts& parts)
      : bs_(bs), parts_(parts), L_(parts.layout), F_(noise_factor(bs)) {
    require(L_.N == bs.N && L_.n_x == bs.n_x && L_.n_u == bs.n_u,
            "lower: parts were built for a different block system");
  }

  LoweredProblem run() {
    // Register every norm term first so atom variables have a fixed position.
    for (const auto& part : parts_.constraints)
      for (const auto& row : part.inequalities)
        for (const auto& [key, coef] : row.norms) register_atom(key, coef);
    for (const auto& [key, w] : parts_.cost.norm_squares) register_atom(key, w);

    out_.layout = L_;
    out_.tau_index = L_.core();
    out_.atom_offset = L_.core() + 1;
    const int n = out_.atom_offset + static_cast<int>(out_.atoms.size());

    for (const auto& part : parts_.constraints) {
      const int begin = row_;
      for (const auto& e : part.equalities) emit_cone_row(e, conic::ConeKind::zero);
      for (const auto& r : part.inequalities) emit_inequality(r);
      for (const auto& cone : part.socs) emit_block(cone, conic::ConeKind::second_order);
      for (const auto& cone : part.psds) emit_block(cone, conic::ConeKind::psd);
      out_.sections.push_back({part.name, begin, row_});
    }
    {
      const int begin = row_;
      for (std::size_t a = 0; a < out_.atoms.size(); ++a) emit_atom(static_cast<int>(a));
      out_.sections.push_back({"norm_atoms", begin, row_});
    }
    {
      const int begin = row_;
      emit_cost();
      out_.sections.push_back({"cost", begin, row_});
    }

    auto& P = out_.program;
    P.A.resize(row_, n);
    P.A.setFromTriplets(trips_.begin(), trips_.end());
    P.A.makeCompressed();
    P.b = Eigen::Map<Vec>(b_.data(), static_cast<Eigen::Index>(b_.size()));
    P.c = Vec::Zero(n);
    const auto& cost = parts_.cost;
    for (const auto& [i, v] : cost.linear.terms) P.c(i) += cost.scale * v;
    P.c(out_.tau_index) += cost.scale;
    P.c(L_.eta()) += cost.eta_weight;
    out_.objective_constant += cost.scale * cost.linear.constant;
    P.validate();
    return std::move(out_);
  }

 private:
  const BlockSystem& bs_;
  const ProgramParts& parts_;
  VariableLayout L_;
  Mat F_;
  LoweredProblem out_;
  std::map<NormKey, int> atom_index_;      // registered variable atoms
  std::map<NormKey, double> const_atoms_;  // norm terms that do not depend on z
  std::vector<conic::Triplet> trips_;
  std::vector<double> b_;
  int row_ = 0;

  void register_atom(const NormKey& key, double coef) {
    if (coef < 0.0) throw ConsistencyError("lower: norm terms must carry nonnegative weights");
    if (atom_index_.count(key) || const_atoms_.count(key)) return;
    const auto arg = norm_argument(bs_, L_, F_, key);
    bool variable = false;
    double sq = 0.0;
    for (const auto& e : arg) {
      variable = variable || !e.terms.empty();
      sq += e.constant * e.constant;
    }
    if (!variable) {
      const_atoms_[key] = std::sqrt(sq);
      return;
    }
    atom_index_[key] = static_cast<int>(out_.atoms.size());
    out_.atoms.push_back(key);
  }

  // s = e(z) in the cone: A row = -coefficients, b = constant.
  void push_row(const AffineExpr& e, double scale = 1.0) {
    for (const auto& [i, v] : e.terms) trips_.emplace_back(row_, i, -scale * v);
    b_.push_back(scale * e.constant);
    ++row_;
  }

  void add_cone(conic::ConeKind kind, int dim) {
    auto& cones = out_.program.cones;
    const bool mergeable = kind == conic::ConeKind::zero || kind == conic::ConeKind::nonnegative;
    if (mergeable && !cones.empty() && cones.back().kind == kind) {
      cones.back().dim += dim;
    } else {
      cones.push_back({kind, dim});
    }
  }

  void emit_cone_row(const AffineExpr& e, conic::ConeKind kind) {
    push_row(e);
    add_cone(kind, 1);
  }

  void emit_inequality(const ChanceRow& r) {
    // -(expr + sum coef * t) >= 0
    AffineExpr e;
    e.constant = -r.expr.constant;
    for (const auto& [i, v] : r.expr.terms) e.add(i, -v);
    for (const auto& [key, coef] : r.norms) {
      const auto c = const_atoms_.find(key);
      if (c != const_atoms_.end()) {
        e.constant -= coef * c->second;
      } else {
        e.add(out_.atom_offset + atom_index_.at(key), -coef);
      }
    }
    emit_cone_row(e, conic::ConeKind::nonnegative);
  }

  void emit_block(const std::vector<AffineExpr>& block, conic::ConeKind kind) {
    for (const auto& e : block) push_row(e);
    add_cone(kind, static_cast<int>(block.size()));
  }

  void emit_atom(int a) {
    const NormKey& key = out_.atoms[a];
    std::vector<AffineExpr> cone;
    AffineExpr t;
    t.add(out_.atom_offset + a, 1.0);
    cone.push_back(std::move(t));
    auto arg = norm_argument(bs_, L_, F_, key);
    for (auto& e : arg) cone.push_back(std::move(e));
    emit_block(cone, conic::ConeKind::second_order);
  }

  // tau >= sum q_i^2 as (tau + 1, tau - 1, 2 q) in the second-order cone.
  void emit_cost() {
    const auto& cost = parts_.cost;
    std::vector<AffineExpr> cone;
    AffineExpr a, b;
    a.add(out_.tau_index, 1.0);
    a.constant = 1.0;
    b.add(out_.tau_index, 1.0);
    b.constant = -1.0;
    cone.push_back(std::move(a));
    cone.push_back(std::move(b));
    for (const auto& q : cost.squares) {
      AffineExpr e;
      e.constant = 2.0 * q.constant;
      for (const auto& [i, v] : q.terms) e.add(i, 2.0 * v);
      cone.push_back(std::move(e));
    }
    for (const auto& [key, w] : cost.norm_squares) {
      const auto c = const_atoms_.find(key);
      if (c != const_atoms_.end()) {
        out_.objective_constant += cost.scale * w * c->second * c->second;
        continue;
      }
      AffineExpr e;
      e.add(out_.atom_offset + atom_index_.at(key), 2.0 * std::sqrt(w));
      cone.push_back(std::move(e));
    }
    emit_block(cone, conic::ConeKind::second_order);
  }
};

}  // namespace detail

/// Stacks variables and rows into a ConicProgram. Norm terms that appear in several rows share
/// one auxiliary t with |arg| <= t; every row uses them with a sign that keeps the relaxation
/// exact at the optimum.
inline LoweredProblem lower(const BlockSystem& bs, const ProgramParts& parts) {
  return detail::Lowering(bs, parts).run();
}

}  // namespace ics

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "ics/conic/projection.hpp"

namespace ics::conic {

enum class SolveStatus { optimal, infeasible, unbounded, max_iter };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::max_iter: return "max_iter";
  }
  return "?";
}

struct SolverSettings {
  double eps_primal = 1e-6;
  double eps_dual = 1e-6;
  double eps_gap = 1e-6;
  int max_iter = 100000;
  double over_relaxation = 1.6;
  double rho = 0.1;     // initial step size for non-equality rows
  double sigma = 1e-6;  // primal regularization of the linear system
  int ruiz_passes = 10;
  bool adaptive_rho = true;
  int check_interval = 10;
  double eps_infeasible = 1e-7;
};

/// Unscaled infinity-norm residuals. The gap is |c^T x + b^T y|.
struct Residuals {
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
};

struct ConicSolution {
  Vec primal;  // x
  Vec dual;    // y, in the dual cone
  Vec slack;   // s = b - A x, in the cone
  SolveStatus status = SolveStatus::max_iter;
  Residuals residuals;
  int iterations = 0;
  double objective = 0.0;
};

/// Optional starting point. Any empty member is treated as zero.
struct WarmStart {
  Vec x;
  Vec y;
  Vec s;
};

namespace detail {

constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;
constexpr double kEqualityRhoFactor = 1e3;

inline double clamp_scaling(double v) {
  if (v < kMinScaling) return 1.0;
  return std::min(v, kMaxScaling);
}

inline double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Operator-splitting solver. With z = A x constrained to C = b - K, each iteration solves one
/// regularized linear system, projects onto K, and takes a dual ascent step:
///   (sigma I + A^T R A) x~ = sigma x - c + A^T (R (b - s) - y)
///   s^ = alpha (b - A x~) + (1 - alpha) s
///   s+ = Proj_K(s^ - R^{-1} y),   y+ = y + R (s+ - s^)
/// R is diagonal: rho on cone rows and 1e3 rho on zero-cone rows. The problem is Ruiz
/// equilibrated beforehand and all termination tests run on unscaled quantities.
class AdmmSolver {
 public:
  AdmmSolver(const ConicProgram& p, const SolverSettings& settings)
      : prog_(p), set_(settings), n_(p.num_variables()), m_(p.num_rows()) {
    prog_.validate();
    equilibrate();
    is_eq_.assign(m_, false);
    Eigen::Index off = 0;
    for (const auto& k : prog_.cones) {
      if (k.kind == ConeKind::zero) {
        for (int i = 0; i < k.dim; ++i) is_eq_[off + i] = true;
      }
      off += k.dim;
    }
    build_gram();
    rho_ = set_.rho;
    factor();
  }

  ConicSolution run(const WarmStart* warm) {
    Vec x = Vec::Zero(n_), s = Vec::Zero(m_), y = Vec::Zero(m_);
    if (warm != nullptr) {
      if (warm->x.size() == n_) x = warm->x.cwiseQuotient(D_);
      if (warm->s.size() == m_) s = warm->s.cwiseProduct(E_);
      if (warm->y.size() == m_) y = gamma_ * warm->y.cwiseQuotient(E_);
    }
    const double alpha = set_.over_relaxation;
    Vec rhs(n_), xt(n_), st(m_), sh(m_), s_new(m_), y_new(m_), x_new(n_);
    ConicSolution sol;
    sol.status = SolveStatus::max_iter;
    int it = 0;
    int adapt_gap = set_.check_interval;
    int next_adapt = adapt_gap;
    for (it = 1; it <= set_.max_iter; ++it) {
      const Vec Ry = (rvec_.cwiseProduct(b_ - s) - y);
      rhs.noalias() = set_.sigma * x - c_;
      rhs.noalias() += At_ * Ry;
      xt = llt_.solve(rhs);
      st.noalias() = b_ - A_ * xt;
      x_new = alpha * xt + (1.0 - alpha) * x;
      sh = alpha * st + (1.0 - alpha) * s;
      s_new = sh - y.cwiseQuotient(rvec_);
      project_product(s_new, prog_.cones);
      y_new = y + rvec_.cwiseProduct(s_new - sh);

      const bool check = it % set_.check_interval == 0 || it == set_.max_iter;
      if (check) {
        const Vec dx = x_new - x;
        const Vec dy = y_new - y;
        x.swap(x_new);
        s.swap(s_new);
        y.swap(y_new);
        const auto status = check_termination(x, s, y, dx, dy, sol);
        if (status) {
          sol.status = *status;
          break;
        }
        // The gap doubles after every change so rho cannot cycle.
        if (set_.adaptive_rho && it >= next_adapt) {
          if (adapt_rho(x, s, y)) adapt_gap *= 2;
          next_adapt = it + adapt_gap;
        }
      } else {
        x.swap(x_new);
        s.swap(s_new);
        y.swap(y_new);
      }
    }
    sol.iterations = std::min(it, set_.max_iter);
    if (sol.status == SolveStatus::max_iter) {
      unscale(x, s, y, sol);
      fill_residuals(x, s, y, sol);
    }
    return sol;
  }

 private:
  // Scaled data.
  ConicProgram prog_;
  SolverSettings set_;
  int n_, m_;
  SparseRowMat A_;
  Eigen::SparseMatrix<double> At_;
  Vec b_, c_, D_, E_;
  double gamma_ = 1.0;
  Mat gram_eq_, gram_in_;
  Eigen::LLT<Mat> llt_;
  double rho_ = 0.1;
  Vec rvec_;
  std::vector<bool> is_eq_;

  void equilibrate() {
    A_ = prog_.A;
    A_.makeCompressed();
    D_ = Vec::Ones(n_);
    E_ = Vec::Ones(m_);
    Vec row(m_), col(n_);
    for (int pass = 0; pass < set_.ruiz_passes; ++pass) {
      row.setZero();
      col.setZero();
      for (int r = 0; r < A_.outerSize(); ++r) {
        for (SparseRowMat::InnerIterator it(A_, r); it; ++it) {
          const double a = std::abs(it.value());
          row(r) = std::max(row(r), a);
          col(it.col()) = std::max(col(it.col()), a);
        }
      }
      // Rows of a non-separable cone share one factor so the cone is preserved.
      Eigen::Index off = 0;
      for (const auto& k : prog_.cones) {
        if (k.kind == ConeKind::second_order || k.kind == ConeKind::psd) {
          const double mx = row.segment(off, k.dim).maxCoeff();
          row.segment(off, k.dim).setConstant(mx);
        }
        off += k.dim;
      }
      for (int i = 0; i < m_; ++i) row(i) = 1.0 / std::sqrt(clamp_scaling(row(i)));
      for (int j = 0; j < n_; ++j) col(j) = 1.0 / std::sqrt(clamp_scaling(col(j)));
      for (int r = 0; r < A_.outerSize(); ++r) {
        for (SparseRowMat::InnerIterator it(A_, r); it; ++it) {
          it.valueRef() *= row(r) * col(it.col());
        }
      }
      E_ = E_.cwiseProduct(row);
      D_ = D_.cwiseProduct(col);
    }
    c_ = D_.cwiseProduct(prog_.c);
    gamma_ = 1.0 / clamp_scaling(inf_norm(c_));
    c_ *= gamma_;
    b_ = E_.cwiseProduct(prog_.b);
    At_ = A_.transpose();
    At_.makeCompressed();
  }

  void build_gram() {
    gram_eq_ = Mat::Zero(n_, n_);
    gram_in_ = Mat::Zero(n_, n_);
    std::vector<int> idx;
    std::vector<double> val;
    for (int r = 0; r < A_.outerSize(); ++r) {
      idx.clear();
      val.clear();
      for (SparseRowMat::InnerIterator it(A_, r); it; ++it) {
        idx.push_back(static_cast<int>(it.col()));
        val.push_back(it.value());
      }
      Mat& G = is_eq_[r] ? gram_eq_ : gram_in_;
      for (std::size_t p = 0; p < idx.size(); ++p) {
        const double vp = val[p];
        double* colp = G.data() + static_cast<Eigen::Index>(idx[p]) * n_;
        for (std::size_t q = 0; q < idx.size(); ++q) colp[idx[q]] += vp * val[q];
      }
    }
  }

  void factor() {
    rvec_.resize(m_);
    for (int i = 0; i < m_; ++i) rvec_(i) = is_eq_[i] ? kEqualityRhoFactor * rho_ : rho_;
    Mat M = rho_ * gram_in_ + (kEqualityRhoFactor * rho_) * gram_eq_;
    M.diagonal().array() += set_.sigma;
    llt_.compute(M);
    if (llt_.info() != Eigen::Success) {
      throw NumericalFailure("conic solver: factorization of the reduced system failed");
    }
  }

  bool adapt_rho(const Vec& x, const Vec& s, const Vec& y) {
    const Vec Ax = A_ * x;
    const Vec Aty = At_ * y;
    const double rp = inf_norm(Ax + s - b_);
    const double rd = inf_norm(Aty + c_);
    const double np = std::max({inf_norm(Ax), inf_norm(s), 1e-12});
    const double nd = std::max({inf_norm(Aty), inf_norm(c_), 1e-12});
    const double ratio = std::sqrt((rp / np) / std::max(rd / nd, 1e-30));
    const double candidate = std::clamp(rho_ * ratio, 1e-6, 1e6);
    if (candidate > 5.0 * rho_ || candidate < 0.2 * rho_) {
      rho_ = candidate;
      factor();
      return true;
    }
    return false;
  }

  void unscale(const Vec& x, const Vec& s, const Vec& y, ConicSolution& sol) const {
    sol.primal = D_.cwiseProduct(x);
    sol.slack = s.cwiseQuotient(E_);
    sol.dual = E_.cwiseProduct(y) / gamma_;
    sol.objective = prog_.c.dot(sol.primal);
  }

  void fill_residuals(const Vec&, const Vec&, const Vec&, ConicSolution& sol) const {
    const Vec Ax = prog_.A * sol.primal;
    const Vec Aty = prog_.A.transpose() * sol.dual;
    sol.residuals.primal = inf_norm(Ax + sol.slack - prog_.b);
    sol.residuals.dual = inf_norm(Aty + prog_.c);
    sol.residuals.gap = std::abs(prog_.c.dot(sol.primal) + prog_.b.dot(sol.dual));
  }

  std::optional<SolveStatus> check_termination(const Vec& x, const Vec& s, const Vec& y,
                                               const Vec& dx_scaled, const Vec& dy_scaled,
                                               ConicSolution& sol) {
    unscale(x, s, y, sol);
    const Vec Ax = (A_ * x).cwiseQuotient(E_);
    const Vec Aty = (At_ * y).cwiseQuotient(D_) / gamma_;
    const Vec& xs = sol.primal;
    const Vec& ss = sol.slack;
    const Vec& ys = sol.dual;
    const double rp = inf_norm(Ax + ss - prog_.b);
    const double rd = inf_norm(Aty + prog_.c);
    const double pobj = prog_.c.dot(xs);
    const double dobj = prog_.b.dot(ys);
    const double gap = std::abs(pobj + dobj);
    sol.residuals = {rp, rd, gap};
    const bool primal_ok =
        rp <= set_.eps_primal * (1.0 + std::max({inf_norm(Ax), inf_norm(ss), inf_norm(prog_.b)}));
    const bool dual_ok = rd <= set_.eps_dual * (1.0 + std::max(inf_norm(Aty), inf_norm(prog_.c)));
    const bool gap_ok = gap <= set_.eps_gap * (1.0 + std::abs(pobj) + std::abs(dobj));
    if (primal_ok && dual_ok && gap_ok) return SolveStatus::optimal;

    // Primal infeasibility: dy in K*, A^T dy ~ 0, b^T dy < 0.
    const Vec dy = E_.cwiseProduct(dy_scaled);
    const double ndy = inf_norm(dy);
    if (ndy > 0.0) {
      const Vec Atdy = (At_ * dy_scaled).cwiseQuotient(D_);
      Vec proj = dy;
      project_dual_product(proj, prog_.cones);
      if (inf_norm(Atdy) <= set_.eps_infeasible * ndy &&
          prog_.b.dot(dy) < -set_.eps_infeasible * ndy && inf_norm(proj - dy) <= 1e-6 * ndy) {
        sol.dual = dy / (-prog_.b.dot(dy));
        return SolveStatus::infeasible;
      }
    }
    // Dual infeasibility: -A dx in K, c^T dx < 0.
    const Vec dx = D_.cwiseProduct(dx_scaled);
    const double ndx = inf_norm(dx);
    if (ndx > 0.0) {
      const Vec Adx = (A_ * dx_scaled).cwiseQuotient(E_);
      Vec w = -Adx;
      Vec proj = w;
      project_product(proj, prog_.cones);
      if (inf_norm(proj - w) <= set_.eps_infeasible * ndx &&
          prog_.c.dot(dx) < -set_.eps_infeasible * ndx) {
        sol.primal = dx / (-prog_.c.dot(dx));
        return SolveStatus::unbounded;
      }
    }
    return std::nullopt;
  }
};

}  // namespace detail

/// Solves a conic program by operator splitting. Returns status max_iter with the final
/// iterate when the tolerances are not met within the iteration budget.
inline ConicSolution solve(const ConicProgram& program, const SolverSettings& settings = {},
                           const WarmStart* warm = nullptr) {
  detail::AdmmSolver solver(program, settings);
  return solver.run(warm);
}

}  // namespace ics::conic

#pragma once

#include <Eigen/Sparse>

#include <string>
#include <vector>

#include "ics/lindisc.hpp"

namespace ics {

/// Concatenated form of N linearized steps:
///   X = Acal x0 + Bcal U + Rvec + sqrt(sigma) Gcal W
/// with X = (x_0, ..., x_N), U = (u_0, ..., u_{N-1}), W = (w_0, ..., w_{N-1}).
/// Py is the covariance of the open-loop deviation process Y = Acal y0 + sqrt(sigma) Gcal W.
struct BlockSystem {
  int N = 0;
  int n_x = 0;
  int n_u = 0;
  double sigma = 1.0;
  Mat Acal;     // (N+1) n_x x n_x
  Mat Bcal;     // (N+1) n_x x N n_u
  Mat Gcal;     // (N+1) n_x x N n_x
  Vec Rvec;     // (N+1) n_x
  Mat P_x0;
  Mat Py;       // (N+1) n_x x (N+1) n_x
  Mat Py_sqrt;  // symmetric PSD root of Py

  int state_dim() const { return (N + 1) * n_x; }
  int control_dim() const { return N * n_u; }
};

/// Block-diagonal weights of the expected quadratic cost. The terminal state block is zero.
struct CostWeights {
  std::vector<Mat> Qx_blocks;  // N + 1
  std::vector<Mat> Qu_blocks;  // N
  double scale = 1.0;          // sigma / N

  Mat Qx() const {
    int n = 0;
    for (const auto& q : Qx_blocks) n += static_cast<int>(q.rows());
    Mat out = Mat::Zero(n, n);
    int off = 0;
    for (const auto& q : Qx_blocks) {
      out.block(off, off, q.rows(), q.cols()) = q;
      off += static_cast<int>(q.rows());
    }
    return out;
  }
  Mat Qu() const {
    int n = 0;
    for (const auto& q : Qu_blocks) n += static_cast<int>(q.rows());
    Mat out = Mat::Zero(n, n);
    int off = 0;
    for (const auto& q : Qu_blocks) {
      out.block(off, off, q.rows(), q.cols()) = q;
      off += static_cast<int>(q.rows());
    }
    return out;
  }
};

namespace detail {

inline void require_psd(const Mat& S, const std::string& name) {
  require(S.rows() == S.cols(), name + " must be square");
  if (S.size() == 0) return;
  const double scale = S.cwiseAbs().maxCoeff();
  require((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + scale),
          name + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + scale)) {
    throw NotPsdError(name + " is not positive semidefinite");
  }
}

inline double min_eigenvalue(const Mat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

/// Stacks N linearized steps into the concatenated system. Rows are built recursively so the
/// transition products A_{k-1} ... A_{j+1} are never formed more than once.
inline BlockSystem assemble(const std::vector<LinearizedStep>& steps, double sigma,
                            const Mat& P_x0) {
  detail::require(!steps.empty(), "assemble: need at least one step");
  detail::require(sigma > 0.0, "assemble: sigma must be > 0");
  BlockSystem bs;
  bs.N = static_cast<int>(steps.size());
  bs.n_x = static_cast<int>(steps.front().A.rows());
  bs.n_u = static_cast<int>(steps.front().B.cols());
  bs.sigma = sigma;
  const int N = bs.N, nx = bs.n_x, nu = bs.n_u;
  detail::require_shape(P_x0, nx, nx, "P_x0");
  detail::require_psd(P_x0, "P_x0");
  for (int k = 0; k < N; ++k) {
    const auto& s = steps[k];
    const std::string tag = "step " + std::to_string(k);
    detail::require_shape(s.A, nx, nx, tag + " A");
    detail::require_shape(s.B, nx, nu, tag + " B");
    detail::require_size(s.r, nx, tag + " r");
    detail::require_shape(s.G, nx, nx, tag + " G");
  }
  bs.P_x0 = P_x0;
  bs.Acal = Mat::Zero((N + 1) * nx, nx);
  bs.Bcal = Mat::Zero((N + 1) * nx, N * nu);
  bs.Gcal = Mat::Zero((N + 1) * nx, N * nx);
  bs.Rvec = Vec::Zero((N + 1) * nx);
  bs.Acal.topRows(nx).setIdentity();
  for (int k = 0; k < N; ++k) {
    const Mat& A = steps[k].A;
    const auto cur = Eigen::seqN(k * nx, nx);
    const auto nxt = Eigen::seqN((k + 1) * nx, nx);
    bs.Acal(nxt, Eigen::all) = A * bs.Acal(cur, Eigen::all);
    if (k > 0) {
      bs.Bcal.block((k + 1) * nx, 0, nx, k * nu) = A * bs.Bcal.block(k * nx, 0, nx, k * nu);
      bs.Gcal.block((k + 1) * nx, 0, nx, k * nx) = A * bs.Gcal.block(k * nx, 0, nx, k * nx);
    }
    bs.Bcal.block((k + 1) * nx, k * nu, nx, nu) = steps[k].B;
    bs.Gcal.block((k + 1) * nx, k * nx, nx, nx) = steps[k].G;
    bs.Rvec(nxt) = A * bs.Rvec(cur) + steps[k].r;
  }
  bs.Py = bs.Acal * P_x0 * bs.Acal.transpose() + sigma * bs.Gcal * bs.Gcal.transpose();
  bs.Py = 0.5 * (bs.Py + bs.Py.transpose()).eval();
  bs.Py_sqrt = psd_sqrt(bs.Py);
  return bs;
}

/// E_k with x_k = E_k X.
inline Eigen::SparseMatrix<double> selector_x(const BlockSystem& bs, int k) {
  detail::require(k >= 0 && k <= bs.N, "selector_x: index out of range");
  Eigen::SparseMatrix<double> E(bs.n_x, bs.state_dim());
  for (int i = 0; i < bs.n_x; ++i) E.insert(i, k * bs.n_x + i) = 1.0;
  E.makeCompressed();
  return E;
}

/// E^u_k with u_k = E^u_k U.
inline Eigen::SparseMatrix<double> selector_u(const BlockSystem& bs, int k) {
  detail::require(k >= 0 && k < bs.N, "selector_u: index out of range");
  Eigen::SparseMatrix<double> E(bs.n_u, bs.control_dim());
  for (int i = 0; i < bs.n_u; ++i) E.insert(i, k * bs.n_u + i) = 1.0;
  E.makeCompressed();
  return E;
}

/// Per-step weights for the expected quadratic cost. Qx may hold N or N + 1 blocks; the
/// terminal block is always replaced by zero since the terminal state is constrained.
inline CostWeights assemble_cost_weights(const std::vector<Mat>& Qx, const std::vector<Mat>& Qu,
                                         double sigma, int N) {
  detail::require(N >= 1, "cost weights: N must be >= 1");
  detail::require(static_cast<int>(Qx.size()) == N || static_cast<int>(Qx.size()) == N + 1,
                  "cost weights: Qx must hold N or N + 1 blocks");
  detail::require(static_cast<int>(Qu.size()) == N, "cost weights: Qu must hold N blocks");
  CostWeights w;
  w.scale = sigma / N;
  for (int k = 0; k < N; ++k) {
    const std::string tag = "Qx[" + std::to_string(k) + "]";
    detail::require(Qx[k].rows() == Qx[k].cols(), tag + " must be square");
    detail::require((Qx[k] - Qx[k].transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1 + Qx[k].norm()),
                    tag + " must be symmetric");
    detail::require(detail::min_eigenvalue(Qx[k]) > 0.0, tag + " must be positive definite");
    w.Qx_blocks.push_back(Qx[k]);
  }
  w.Qx_blocks.push_back(Mat::Zero(Qx[0].rows(), Qx[0].cols()));
  for (int k = 0; k < N; ++k) {
    const std::string tag = "Qu[" + std::to_string(k) + "]";
    detail::require_psd(Qu[k], tag);
    w.Qu_blocks.push_back(Qu[k]);
  }
  return w;
}

/// Block feedback matrix [blkdiag(K_0, ..., K_{N-1}), 0].
inline Mat stack_feedback(const std::vector<Mat>& K_blocks, int n_x) {
  const int N = static_cast<int>(K_blocks.size());
  const int nu = N > 0 ? static_cast<int>(K_blocks.front().rows()) : 0;
  Mat K = Mat::Zero(N * nu, (N + 1) * n_x);
  for (int k = 0; k < N; ++k) {
    detail::require_shape(K_blocks[k], nu, n_x, "feedback gain " + std::to_string(k));
    K.block(k * nu, k * n_x, nu, n_x) = K_blocks[k];
  }
  return K;
}

/// Mean of the stacked state for a feedforward sequence V.
inline Vec state_mean(const BlockSystem& bs, const Vec& x0_mean, const Vec& V) {
  return bs.Acal * x0_mean + bs.Bcal * V + bs.Rvec;
}

/// (I + Bcal K) Py (I + Bcal K)^T.
inline Mat state_covariance(const BlockSystem& bs, const Mat& K) {
  const Mat M = Mat::Identity(bs.state_dim(), bs.state_dim()) + bs.Bcal * K;
  return M * bs.Py * M.transpose();
}

/// K Py K^T.
inline Mat control_covariance(const BlockSystem& bs, const Mat& K) {
  return K * bs.Py * K.transpose();
}

}  // namespace ics

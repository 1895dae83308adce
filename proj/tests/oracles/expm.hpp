#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace oracle {

using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Matrix exponential by scaling and squaring with a long Taylor series in long double.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& M) {
  const MatL A = M.cast<long double>();
  const long double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  if (norm > 0.25L) s = static_cast<int>(std::ceil(std::log2(static_cast<double>(norm / 0.25L))));
  const MatL X = A / std::ldexp(1.0L, s);
  MatL term = MatL::Identity(A.rows(), A.cols());
  MatL E = term;
  for (int j = 1; j <= 30; ++j) {
    term = term * X / static_cast<long double>(j);
    E += term;
  }
  for (int i = 0; i < s; ++i) E = E * E;
  return E.cast<double>();
}

// Van Loan block exponentials of the ZOH discretization of dx = (A x + B u + c) dt + G dw
// over an interval h:
//   Ad = e^{Ah},  Bd = int e^{As} ds B,  cd = int e^{As} ds c,  Q = int e^{As} G G^T e^{A^T s} ds.
struct ZohBlocks {
  Eigen::MatrixXd Ad, Bd, Q;
  Eigen::VectorXd cd;
};

inline ZohBlocks zoh(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& c,
                     const Eigen::MatrixXd& G, double h) {
  const auto n = A.rows(), m = B.cols();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + m + 1, n + m + 1);
  M.topLeftCorner(n, n) = A;
  M.block(0, n, n, m) = B;
  M.block(0, n + m, n, 1) = c;
  const Eigen::MatrixXd E = expm(h * M);
  ZohBlocks z;
  z.Ad = E.topLeftCorner(n, n);
  z.Bd = E.block(0, n, n, m);
  z.cd = E.block(0, n + m, n, 1);
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  V.topLeftCorner(n, n) = -A;
  V.topRightCorner(n, n) = G * G.transpose();
  V.bottomRightCorner(n, n) = A.transpose();
  const Eigen::MatrixXd F = expm(h * V);
  z.Q = F.bottomRightCorner(n, n).transpose() * F.topRightCorner(n, n);
  z.Q = 0.5 * (z.Q + z.Q.transpose()).eval();
  return z;
}

}  // namespace oracle

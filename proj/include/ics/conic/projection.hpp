#pragma once

#include <Eigen/Eigenvalues>

#include <span>

#include "ics/conic/program.hpp"

namespace ics::conic {

namespace detail {

inline void project_soc_inplace(Eigen::Ref<Vec> v) {
  const double t = v(0);
  const double nx = v.tail(v.size() - 1).norm();
  if (nx <= t) return;
  if (nx <= -t) {
    v.setZero();
    return;
  }
  const double a = 0.5 * (t + nx);
  v(0) = a;
  v.tail(v.size() - 1) *= a / nx;
}

inline void project_psd_inplace(Eigen::Ref<Vec> v) {
  const Vec copy = v;
  Mat S = smat(copy);
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  const Vec lambda = es.eigenvalues();
  if (lambda.minCoeff() >= 0.0) return;
  const Mat& Q = es.eigenvectors();
  // Only the nonnegative part of the spectrum contributes.
  int first = 0;
  while (first < lambda.size() && lambda(first) < 0.0) ++first;
  const int cnt = static_cast<int>(lambda.size()) - first;
  if (cnt == 0) {
    v.setZero();
    return;
  }
  const Mat Qp = Q.rightCols(cnt);
  S.noalias() = Qp * lambda.tail(cnt).asDiagonal() * Qp.transpose();
  v = svec(S);
}

}  // namespace detail

/// Euclidean projection onto a single cone. The zero cone projects to the origin.
inline Vec project_cone(const Vec& v, ConeKind kind, int dim) {
  if (v.size() != dim) throw InvalidArgument("project_cone: vector length does not match dim");
  Vec out = v;
  switch (kind) {
    case ConeKind::zero: out.setZero(); break;
    case ConeKind::nonnegative: out = out.cwiseMax(0.0); break;
    case ConeKind::second_order: detail::project_soc_inplace(out); break;
    case ConeKind::psd:
      if (psd_side(dim) < 0) throw InvalidArgument("project_cone: PSD length not triangular");
      detail::project_psd_inplace(out);
      break;
  }
  return out;
}

/// Projection onto the dual cone. Every cone here is self-dual except the zero cone, whose
/// dual is the whole space.
inline Vec project_dual_cone(const Vec& v, ConeKind kind, int dim) {
  if (kind == ConeKind::zero) {
    if (v.size() != dim) throw InvalidArgument("project_dual_cone: length mismatch");
    return v;
  }
  return project_cone(v, kind, dim);
}

/// Projection onto the polar cone K° = -K*.
inline Vec project_polar_cone(const Vec& v, ConeKind kind, int dim) {
  return -project_dual_cone(-v, kind, dim);
}

/// In-place projection of a stacked vector onto the product cone.
inline void project_product(Eigen::Ref<Vec> v, std::span<const Cone> cones) {
  Eigen::Index off = 0;
  for (const auto& k : cones) {
    auto seg = v.segment(off, k.dim);
    switch (k.kind) {
      case ConeKind::zero: seg.setZero(); break;
      case ConeKind::nonnegative: seg = seg.cwiseMax(0.0); break;
      case ConeKind::second_order: detail::project_soc_inplace(seg); break;
      case ConeKind::psd: detail::project_psd_inplace(seg); break;
    }
    off += k.dim;
  }
}

inline void project_dual_product(Eigen::Ref<Vec> v, std::span<const Cone> cones) {
  Eigen::Index off = 0;
  for (const auto& k : cones) {
    auto seg = v.segment(off, k.dim);
    switch (k.kind) {
      case ConeKind::zero: break;
      case ConeKind::nonnegative: seg = seg.cwiseMax(0.0); break;
      case ConeKind::second_order: detail::project_soc_inplace(seg); break;
      case ConeKind::psd: detail::project_psd_inplace(seg); break;
    }
    off += k.dim;
  }
}

}  // namespace ics::conic

#pragma once

#include <Eigen/Sparse>

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ics/types.hpp"

namespace ics::conic {

using SparseRowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

enum class ConeKind { zero, nonnegative, second_order, psd };

/// One cone of the product. For PSD cones `dim` is the length of the scaled vectorization,
/// a triangle number d (d + 1) / 2 for a d-by-d matrix.
struct Cone {
  ConeKind kind;
  int dim;
};

inline const char* to_string(ConeKind k) {
  switch (k) {
    case ConeKind::zero: return "zero";
    case ConeKind::nonnegative: return "nonneg";
    case ConeKind::second_order: return "soc";
    case ConeKind::psd: return "psd";
  }
  return "?";
}

/// Side length of a PSD cone from its vectorized length, or -1 if not a triangle number.
inline int psd_side(int vec_dim) {
  const int d = static_cast<int>(std::lround((std::sqrt(8.0 * vec_dim + 1.0) - 1.0) / 2.0));
  return d * (d + 1) / 2 == vec_dim ? d : -1;
}

/// Linear objective over an affine slice of a product cone:
///   minimize c^T x  subject to  A x + s = b,  s in K_1 x ... x K_p.
/// Rows of A are grouped by cone in the order of `cones`.
struct ConicProgram {
  Vec c;
  SparseRowMat A;
  Vec b;
  std::vector<Cone> cones;

  int num_variables() const { return static_cast<int>(c.size()); }
  int num_rows() const { return static_cast<int>(b.size()); }

  void validate() const {
    if (A.rows() != b.size() || A.cols() != c.size()) {
      throw ConsistencyError("conic program: A is " + std::to_string(A.rows()) + "x" +
                             std::to_string(A.cols()) + " but b has " +
                             std::to_string(b.size()) + " and c has " +
                             std::to_string(c.size()) + " entries");
    }
    long total = 0;
    for (const auto& k : cones) {
      if (k.dim < 1) throw ConsistencyError("conic program: cone dimension must be >= 1");
      if (k.kind == ConeKind::psd && psd_side(k.dim) < 0) {
        throw ConsistencyError("conic program: PSD cone length " + std::to_string(k.dim) +
                               " is not a triangle number");
      }
      total += k.dim;
    }
    if (total != b.size()) {
      throw ConsistencyError("conic program: cones cover " + std::to_string(total) +
                             " rows, program has " + std::to_string(b.size()));
    }
  }
};

/// Scaled lower-triangle vectorization (column-major, off-diagonals times sqrt 2). The
/// Euclidean inner product of two vectorizations equals the trace inner product.
inline Vec svec(const Mat& S) {
  const auto d = S.rows();
  Vec v(d * (d + 1) / 2);
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = j; i < d; ++i) {
      v(idx++) = i == j ? S(i, j) : std::numbers::sqrt2 * 0.5 * (S(i, j) + S(j, i));
    }
  }
  return v;
}

inline Mat smat(const Vec& v) {
  const int d = psd_side(static_cast<int>(v.size()));
  if (d < 0) throw InvalidArgument("smat: length is not a triangle number");
  Mat S(d, d);
  Eigen::Index idx = 0;
  for (int j = 0; j < d; ++j) {
    for (int i = j; i < d; ++i) {
      const double val = i == j ? v(idx) : v(idx) / std::numbers::sqrt2;
      S(i, j) = S(j, i) = val;
      ++idx;
    }
  }
  return S;
}

/// Position of entry (i, j), i >= j, inside the scaled vectorization of a d-by-d matrix.
inline int svec_index(int d, int i, int j) {
  if (i < j) std::swap(i, j);
  return j * d - j * (j - 1) / 2 + (i - j);
}

/// Plain-text dump:
///   ics-conic 1
///   dims <n> <m> <nnz>
///   cones <count>            followed by <count> lines "<kind> <dim>"
///   objective <count>        followed by "<index> <value>" lines (nonzeros of c)
///   rhs <count>              followed by "<index> <value>" lines (nonzeros of b)
///   matrix <nnz>             followed by "<row> <col> <value>" triplets
///   end
inline void write_program(std::ostream& os, const ConicProgram& p) {
  p.validate();
  os << std::setprecision(17);
  os << "ics-conic 1\n";
  os << "dims " << p.num_variables() << ' ' << p.num_rows() << ' ' << p.A.nonZeros() << '\n';
  os << "cones " << p.cones.size() << '\n';
  for (const auto& k : p.cones) os << to_string(k.kind) << ' ' << k.dim << '\n';
  auto sparse_vec = [&](const char* name, const Vec& v) {
    int nnz = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) nnz += v(i) != 0.0;
    os << name << ' ' << nnz << '\n';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (v(i) != 0.0) os << i << ' ' << v(i) << '\n';
    }
  };
  sparse_vec("objective", p.c);
  sparse_vec("rhs", p.b);
  os << "matrix " << p.A.nonZeros() << '\n';
  for (int r = 0; r < p.A.outerSize(); ++r) {
    for (SparseRowMat::InnerIterator it(p.A, r); it; ++it) {
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    }
  }
  os << "end\n";
}

inline ConicProgram read_program(std::istream& is) {
  auto fail = [](const std::string& what) -> void {
    throw InvalidArgument("read_program: " + what);
  };
  auto expect = [&](const char* word) {
    std::string tok;
    if (!(is >> tok) || tok != word) fail(std::string("expected '") + word + "'");
  };
  expect("ics-conic");
  int version = 0;
  is >> version;
  if (version != 1) fail("unsupported version");
  expect("dims");
  long n = 0, m = 0, nnz = 0;
  if (!(is >> n >> m >> nnz) || n < 0 || m < 0 || nnz < 0) fail("bad dims");
  ConicProgram p;
  p.c = Vec::Zero(n);
  p.b = Vec::Zero(m);
  expect("cones");
  long count = 0;
  is >> count;
  for (long i = 0; i < count; ++i) {
    std::string kind;
    int dim = 0;
    if (!(is >> kind >> dim)) fail("bad cone line");
    ConeKind k = ConeKind::zero;
    if (kind == "zero") k = ConeKind::zero;
    else if (kind == "nonneg") k = ConeKind::nonnegative;
    else if (kind == "soc") k = ConeKind::second_order;
    else if (kind == "psd") k = ConeKind::psd;
    else fail("unknown cone kind '" + kind + "'");
    p.cones.push_back({k, dim});
  }
  auto read_vec = [&](const char* name, Vec& v) {
    expect(name);
    long cnt = 0;
    is >> cnt;
    for (long i = 0; i < cnt; ++i) {
      long idx = 0;
      double val = 0;
      if (!(is >> idx >> val) || idx < 0 || idx >= v.size()) fail(std::string("bad ") + name);
      v(idx) = val;
    }
  };
  read_vec("objective", p.c);
  read_vec("rhs", p.b);
  expect("matrix");
  long cnt = 0;
  is >> cnt;
  std::vector<Triplet> trips;
  trips.reserve(cnt);
  for (long i = 0; i < cnt; ++i) {
    long r = 0, col = 0;
    double val = 0;
    if (!(is >> r >> col >> val) || r < 0 || r >= m || col < 0 || col >= n) fail("bad triplet");
    trips.emplace_back(static_cast<int>(r), static_cast<int>(col), val);
  }
  expect("end");
  p.A.resize(m, n);
  p.A.setFromTriplets(trips.begin(), trips.end());
  p.validate();
  return p;
}

}  // namespace ics::conic

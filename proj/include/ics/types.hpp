#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "ics/errors.hpp"

namespace ics {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

inline void require_size(const Vec& v, Eigen::Index n, const std::string& name) {
  if (v.size() != n) {
    throw InvalidArgument(name + ": expected length " + std::to_string(n) + ", got " +
                          std::to_string(v.size()));
  }
}

inline void require_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw InvalidArgument(name + ": expected " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()));
  }
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace detail
}  // namespace ics

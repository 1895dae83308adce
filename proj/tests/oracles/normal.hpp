#pragma once

#include <cmath>

namespace oracle {

// erf(x) by its Maclaurin series in long double; adequate for |x| <= 4.
inline long double erf_series(long double x) {
  long double term = x, sum = x;
  const long double x2 = x * x;
  for (int n = 1; n < 400; ++n) {
    term *= -x2 / n;
    const long double add = term / (2 * n + 1);
    sum += add;
    if (std::fabs(add) < 1e-30L) break;
  }
  return sum * 2.0L / std::sqrt(3.14159265358979323846264338327950288L);
}

inline long double normal_cdf(long double x) {
  return 0.5L * (1.0L + erf_series(x / std::sqrt(2.0L)));
}

// Quantile by bisection on the series CDF.
inline double normal_quantile(double p) {
  long double lo = -6.0L, hi = 6.0L;
  for (int i = 0; i < 200; ++i) {
    const long double mid = 0.5L * (lo + hi);
    if (normal_cdf(mid) < p) lo = mid; else hi = mid;
  }
  return static_cast<double>(0.5L * (lo + hi));
}

}  // namespace oracle

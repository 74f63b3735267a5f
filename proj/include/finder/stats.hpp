#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace finder {

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double standard_error = 0.0;
  double degrees_of_freedom = 0.0;
  std::string warning;
};

// Pooled standard error of the difference of two means.
inline double pooled_standard_error(double s1, int n1, double s2, int n2) {
  const double pooled_var = ((n1 - 1) * s1 * s1 + (n2 - 1) * s2 * s2) / static_cast<double>(n1 + n2 - 2);
  return std::sqrt(pooled_var * (1.0 / n1 + 1.0 / n2));
}

// Two-sample t-test with pooled variance and an exact two-tailed p-value.
inline TTestResult t_test(double mean1, double s1, int n1, double mean2, double s2, int n2) {
  if (n1 < 2 || n2 < 2) throw std::invalid_argument("t_test: each group needs at least two samples");
  if (s1 < 0 || s2 < 0) throw std::invalid_argument("t_test: standard deviations must be non-negative");
  TTestResult r;
  r.degrees_of_freedom = n1 + n2 - 2;
  r.standard_error = pooled_standard_error(s1, n1, s2, n2);
  if (r.standard_error == 0.0) {
    if (mean1 == mean2) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean1 > mean2 ? INFINITY : -INFINITY;
      r.p = 0.0;
      r.warning = "zero standard error with unequal means";
    }
    return r;
  }
  r.t = (mean1 - mean2) / r.standard_error;
  boost::math::students_t dist(r.degrees_of_freedom);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace finder

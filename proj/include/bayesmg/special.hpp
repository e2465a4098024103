#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "bayesmg/errors.hpp"

namespace bayesmg {

namespace detail {

// Power series in log space; good for moderate x and any order.
inline double log_bessel_i_series(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 10000; ++k) {
    term *= q / (k * (k + nu));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + std::log(sum);
}

// Large-argument (Hankel) expansion, used for small orders.
inline double log_bessel_i_hankel(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 60; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(next) >= std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

// Uniform (Debye) expansion in the order, four correction terms.
inline double log_bessel_i_debye(double nu, double x) {
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double t = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
  const double u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2 * t2 - 425425.0 * t2 * t2 * t2) / 414720.0;
  const double u4 = t2 * t2 *
                    (4465125.0 - 94121676.0 * t2 + 349922430.0 * t2 * t2 - 446185740.0 * t2 * t2 * t2 +
                     185910725.0 * t2 * t2 * t2 * t2) /
                    39813120.0;
  const double corr = 1.0 + u1 / nu + u2 / (nu * nu) + u3 / (nu * nu * nu) + u4 / (nu * nu * nu * nu);
  return nu * eta - 0.5 * std::log(2.0 * std::numbers::pi * nu) - 0.25 * std::log(1.0 + z * z) + std::log(corr);
}

}  // namespace detail

/// log I_nu(x) for nu >= 0, x >= 0, without overflow for large x.
inline double log_bessel_i(double nu, double x) {
  detail::require_domain(nu >= 0.0 && x >= 0.0 && std::isfinite(nu) && std::isfinite(x),
                         "log_bessel_i: need finite nu >= 0 and x >= 0");
  if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (x <= 30.0) return detail::log_bessel_i_series(nu, x);
  if (nu < 2.0) return detail::log_bessel_i_hankel(nu, x);
  return detail::log_bessel_i_debye(nu, x);
}

}  // namespace bayesmg

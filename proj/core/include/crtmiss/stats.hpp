#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace crtmiss::stats {

inline double expit(double t) {
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(1 + exp(t)) without overflow.
inline double log1pexp(double t) {
  if (t > 37.0) return t + std::exp(-t);
  if (t > -37.0) return std::log1p(std::exp(t));
  return std::exp(t);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double normal_quantile(double p);

/// Student-t quantile for real (possibly fractional or infinite) df.
double student_t_quantile(double df, double p);

double mean(std::span<const double> v);

/// Unbiased sample variance (denominator n-1); 0 for n < 2.
double sample_variance(std::span<const double> v);

struct GaussHermite {
  std::vector<double> nodes;    // roots of H_n
  std::vector<double> weights;  // weights for integrating f(x) e^{-x^2}
};

/// Physicists' Gauss-Hermite rule, computed by Golub-Welsch and cached per n.
/// Thread-safe.
const GaussHermite& gauss_hermite(int n);

/// E[ expit(offset + slope*X) ] for X ~ N(mean, variance), by Gauss-Hermite
/// quadrature. Serves as the numerical-integration oracle for missingness
/// calibration and marginal success rates.
double expit_normal_mean(double offset, double slope, double mean, double variance,
                         int n_nodes = 80);

}  // namespace crtmiss::stats

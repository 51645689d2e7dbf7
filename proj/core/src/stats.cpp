#include "crtmiss/stats.hpp"

#include <map>
#include <mutex>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "crtmiss/rng.hpp"

namespace crtmiss::stats {

double normal_quantile(double p) { return rng::normal_quantile(p); }

double student_t_quantile(double df, double p) {
  if (!std::isfinite(df)) {
    return normal_quantile(p);
  }
  // Near-zero df (possible from the Barnard-Rubin adjustment when the
  // between-imputation variance dwarfs the within variance) overflows the
  // quantile; the honest answer is an unbounded interval.
  try {
    boost::math::students_t_distribution<double> dist(df);
    return boost::math::quantile(dist, p);
  } catch (const std::overflow_error&) {
    const double inf = std::numeric_limits<double>::infinity();
    return p >= 0.5 ? inf : -inf;
  }
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(n - 1);
}

namespace {

GaussHermite compute_gauss_hermite(int n) {
  // Golub-Welsch: eigen-decompose the symmetric tridiagonal Jacobi matrix
  // with off-diagonal sqrt(i/2); weights are sqrt(pi) * (first component)^2.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(i / 2.0);
    jacobi(i, i - 1) = b;
    jacobi(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  GaussHermite rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = solver.eigenvalues()(i);
    const double v = solver.eigenvectors()(0, i);
    rule.weights[i] = sqrt_pi * v * v;
  }
  return rule;
}

}  // namespace

const GaussHermite& gauss_hermite(int n) {
  static std::mutex mutex;
  static std::map<int, GaussHermite> cache;
  std::scoped_lock lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, compute_gauss_hermite(n)).first;
  }
  return it->second;
}

double expit_normal_mean(double offset, double slope, double mean, double variance,
                         int n_nodes) {
  const GaussHermite& rule = gauss_hermite(n_nodes);
  const double scale = std::sqrt(2.0 * variance);
  double acc = 0.0;
  for (int i = 0; i < n_nodes; ++i) {
    acc += rule.weights[i] * expit(offset + slope * (mean + scale * rule.nodes[i]));
  }
  return acc / std::sqrt(M_PI);
}

}  // namespace crtmiss::stats

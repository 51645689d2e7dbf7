#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crtmiss/analysis_spec.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

struct RelrFit {
  Eigen::VectorXd fixed_effects;
  double sigma_b2_hat = 0.0;
  Eigen::MatrixXd covariance;  // fixed-effects block of the inverse Hessian
  double loglik = 0.0;
  bool converged = false;
  int quad_points = 0;
  bool boundary_variance = false;  // sigma_b2_hat pinned at (or driven to) zero
  std::vector<std::string> term_names;
  int treatment_column = 1;
  int clusters_arm0 = 0;
  int clusters_arm1 = 0;

  double k_per_arm() const { return 0.5 * (clusters_arm0 + clusters_arm1); }
};

struct RelrOptions {
  int quad_points = 15;
  std::optional<double> fixed_sigma_b2;   // pin the variance (0 gives the GLM fit)
  const Eigen::VectorXd* covariate_means = nullptr;
  double gradient_tol = 1e-6;
  int max_iterations = 500;
};

/// Random-intercept logistic regression fitted by maximum likelihood with
/// adaptive Gauss-Hermite quadrature over the cluster effect; standard errors
/// from the inverse negative Hessian (finite differences of the gradient).
/// Individuals with missing outcomes are excluded, so passing an incomplete
/// dataset gives the complete-records fit.
RelrFit fit_relr(const TrialDataset& dataset, const AnalysisSpec& spec,
                 const RelrOptions& options = {});

/// t-based interval for the intervention effect with df = 2k - 2.
EffectEstimate relr_interval(const RelrFit& fit, double k_per_arm, double ci_level = 0.95);

/// AGQ log-likelihood at fixed parameters; exposed for the quadrature oracle
/// and gradient checks. theta = (fixed effects..., log sigma_b).
double relr_loglik(const TrialDataset& dataset, const AnalysisSpec& spec,
                   const Eigen::VectorXd& theta, int quad_points,
                   const Eigen::VectorXd* covariate_means = nullptr);

/// Analytic gradient of the AGQ log-likelihood (same parameterisation).
Eigen::VectorXd relr_score(const TrialDataset& dataset, const AnalysisSpec& spec,
                           const Eigen::VectorXd& theta, int quad_points,
                           const Eigen::VectorXd* covariate_means = nullptr);

}  // namespace crtmiss

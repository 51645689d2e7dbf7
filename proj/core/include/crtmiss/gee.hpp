#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "crtmiss/analysis_spec.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

struct GeeFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd sandwich_cov;  // robust covariance (uncorrected)
  Eigen::MatrixXd model_cov;     // model-based covariance (bread inverse)
  double alpha_hat = 0.0;        // exchangeable working correlation
  Link link = Link::Logit;
  WorkingCorrelation working = WorkingCorrelation::Exchangeable;
  bool converged = false;
  bool fell_back_to_independence = false;
  int iterations = 0;
  std::vector<std::string> term_names;
  int treatment_column = 1;
  int clusters_arm0 = 0;
  int clusters_arm1 = 0;
  int cluster_level_params = 0;  // the "d" in the 2k-2-d df rule

  double k_per_arm() const { return 0.5 * (clusters_arm0 + clusters_arm1); }
};

/// GEE for clustered binary outcomes, scale fixed at 1. alpha is re-estimated
/// each iteration from standardized Pearson residual cross-products (clamped
/// to [0, 0.99]); coefficients by Fisher scoring on the estimating equations.
/// If the exchangeable fit fails to converge the model is refitted under
/// independence and fell_back_to_independence is set. Missing outcomes are
/// excluded, so an incomplete dataset gives the complete-records fit.
GeeFit fit_gee(const TrialDataset& dataset, const AnalysisSpec& spec,
               const Eigen::VectorXd* covariate_means = nullptr);

/// Small-sample corrected interval: SE multiplied by sqrt(k/(k-1)) and a t
/// interval with df = 2k - 2 - d. Scale is logOR (logit link) or logRR (log
/// link). Throws CrtError(NonPositiveDf) when the df is not positive.
EffectEstimate corrected_interval(const GeeFit& fit, double k_per_arm,
                                  int d_cluster_level_params, double ci_level = 0.95);

/// Norm of the estimating function at the fitted coefficients (for tests).
double gee_estimating_residual(const TrialDataset& dataset, const AnalysisSpec& spec,
                               const GeeFit& fit,
                               const Eigen::VectorXd* covariate_means = nullptr);

}  // namespace crtmiss

#pragma once

#include <Eigen/Core>

#include "crtmiss/analysis_spec.hpp"

namespace crtmiss {

struct GlmFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // inverse Fisher information at the optimum
  Link link = Link::Logit;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
};

/// Maximum-likelihood binomial regression by Fisher scoring.
/// Converges when the relative coefficient change or the score sup-norm drops
/// below 1e-8. Throws CrtError(RankDeficient | Separation | NoConvergence).
/// Log-link fitting step-halves whenever the deviance increases or a fitted
/// probability leaves (0,1).
GlmFit fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
               Link link = Link::Logit);

struct GlmPrediction {
  Eigen::VectorXd values;
  bool any_above_one = false;  // only possible under the log link
};

GlmPrediction predict(const GlmFit& fit, const Eigen::MatrixXd& design);

/// Log-likelihood of a binomial GLM at given coefficients (used by tests for
/// finite-difference score checks).
double glm_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                  const Eigen::VectorXd& coefficients, Link link);

}  // namespace crtmiss

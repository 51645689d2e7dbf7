#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "crtmiss/analysis_spec.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

/// Generative parameters for one simulation scenario. Rows of the generated
/// matrices are clusters (first k control, then k intervention), columns are
/// individuals.
struct ScenarioConfig {
  int k = 50;  // clusters per arm
  int m = 50;  // individuals per cluster

  // outcome model
  double beta0 = 0.0;
  double beta1 = 1.36;          // intervention effect (conditional log odds)
  double beta2_control = 1.0;   // covariate slope, control arm
  double beta2_treat = 1.0;     // covariate slope, intervention arm
  double sigma_b2 = 0.2;        // outcome random-intercept variance
  Link outcome_link = Link::Logit;

  // covariate model
  double mu_x = 0.0;
  double sigma_alpha2 = 0.18;   // between-cluster covariate variance
  double sigma_u2 = 3.37;       // within-cluster covariate variance

  // missingness model: logit P(missing) = psi_i + phi_i * x
  double psi_control = -1.34;
  double psi_treat = -1.34;
  double phi_control = 1.0;
  double phi_treat = 1.0;

  double covariate_variance() const { return sigma_alpha2 + sigma_u2; }
  double covariate_icc() const { return sigma_alpha2 / covariate_variance(); }
  bool arm_specific_slopes() const { return beta2_control != beta2_treat; }

  void check() const;  // throws on invalid variances / sizes
};

/// Deterministic identity of one replication's random streams.
struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t replication_index = 0;
};

/// Named parameterisations:
///   S1-S4: the four primary scenarios (beta1 = 1.36).
///   A1-A4: the same designs with beta1 = 1.0 (lower true risk difference).
/// Throws CrtError(UnknownScenario) for anything else.
ScenarioConfig builtin_scenario(const std::string& name);

bool is_builtin_scenario(const std::string& name);

/// X = alpha_cluster + u_individual, alpha ~ N(mu_x, sigma_alpha2),
/// u ~ N(0, sigma_u2). Returns a 2k x m matrix.
Eigen::MatrixXd generate_covariates(const ScenarioConfig& config, const SeedSpec& seed);

/// delta ~ N(0, sigma_b2) per cluster; pi = inverse-link(beta0 + beta1*arm +
/// beta2_arm*x + delta); Y ~ Bernoulli(pi). Throws
/// CrtError(ProbabilityOverflow) if the log link produces pi >= 1.
Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> generate_outcomes(
    const ScenarioConfig& config, const Eigen::MatrixXd& covariates,
    const SeedSpec& seed);

/// Independent missingness indicators: P(missing) = expit(psi_i + phi_i * x).
/// true = missing.
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> apply_missingness(
    const ScenarioConfig& config, const Eigen::MatrixXd& covariates,
    const SeedSpec& seed);

/// Full pipeline; outcomes are masked by the missingness indicators. The
/// single covariate is named "x".
TrialDataset generate_trial(const ScenarioConfig& config, const SeedSpec& seed);

/// Same draws as generate_trial, returning both the full dataset (no outcome
/// masked) and the observed dataset. The harness analyses the former under
/// the "full" strategy and the latter under CRA/MMI.
struct TrialPair {
  TrialDataset full;
  TrialDataset observed;
};
TrialPair generate_trial_pair(const ScenarioConfig& config, const SeedSpec& seed);

}  // namespace crtmiss

#include "crtmiss/datagen.hpp"

#include <cmath>

#include "crtmiss/errors.hpp"
#include "crtmiss/rng.hpp"
#include "crtmiss/stats.hpp"

namespace crtmiss {

void ScenarioConfig::check() const {
  if (k < 1 || m < 1) {
    throw CrtError(ErrorCode::PlanInfeasible, "scenario requires k >= 1 and m >= 1");
  }
  if (sigma_b2 <= 0.0 || sigma_alpha2 <= 0.0 || sigma_u2 <= 0.0) {
    throw CrtError(ErrorCode::PlanInfeasible,
                   "scenario variances sigma_b2, sigma_alpha2, sigma_u2 must be > 0");
  }
}

ScenarioConfig builtin_scenario(const std::string& name) {
  ScenarioConfig config;  // defaults already encode S1
  bool appendix = false;
  std::string base = name;
  if (name.size() == 2 && name[0] == 'A') {
    appendix = true;
    base = "S" + name.substr(1);
  }
  if (base == "S1") {
    // defaults
  } else if (base == "S2") {
    config.psi_treat = 0.65;
  } else if (base == "S3") {
    config.beta2_control = 0.588;
  } else if (base == "S4") {
    config.beta2_control = 0.588;
    config.psi_treat = 0.65;
  } else {
    throw CrtError(ErrorCode::UnknownScenario, "unknown scenario '" + name + "'");
  }
  if (appendix) config.beta1 = 1.0;
  return config;
}

bool is_builtin_scenario(const std::string& name) {
  try {
    builtin_scenario(name);
    return true;
  } catch (const CrtError&) {
    return false;
  }
}

Eigen::MatrixXd generate_covariates(const ScenarioConfig& config, const SeedSpec& seed) {
  config.check();
  const int rows = 2 * config.k;
  rng::Stream cluster_stream(seed.master_seed, seed.replication_index,
                             rng::Role::ClusterCovariate);
  rng::Stream indiv_stream(seed.master_seed, seed.replication_index,
                           rng::Role::IndividualCovariate);
  const double sd_alpha = std::sqrt(config.sigma_alpha2);
  const double sd_u = std::sqrt(config.sigma_u2);
  Eigen::MatrixXd x(rows, config.m);
  for (int j = 0; j < rows; ++j) {
    const double alpha = cluster_stream.normal(config.mu_x, sd_alpha);
    for (int l = 0; l < config.m; ++l) {
      x(j, l) = alpha + indiv_stream.normal(0.0, sd_u);
    }
  }
  return x;
}

Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> generate_outcomes(
    const ScenarioConfig& config, const Eigen::MatrixXd& covariates,
    const SeedSpec& seed) {
  config.check();
  const int rows = 2 * config.k;
  if (covariates.rows() != rows || covariates.cols() != config.m) {
    throw CrtError(ErrorCode::PlanInfeasible, "covariate matrix shape mismatch");
  }
  rng::Stream intercept_stream(seed.master_seed, seed.replication_index,
                               rng::Role::ClusterIntercept);
  rng::Stream outcome_stream(seed.master_seed, seed.replication_index,
                             rng::Role::OutcomeBernoulli);
  const double sd_b = std::sqrt(config.sigma_b2);
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> y(rows, config.m);
  double max_lp = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < rows; ++j) {
    const int arm = j < config.k ? 0 : 1;
    const double slope = arm == 0 ? config.beta2_control : config.beta2_treat;
    const double delta = intercept_stream.normal(0.0, sd_b);
    for (int l = 0; l < config.m; ++l) {
      const double lp = config.beta0 + config.beta1 * arm + slope * covariates(j, l) + delta;
      double pi;
      if (config.outcome_link == Link::Logit) {
        pi = stats::expit(lp);
      } else {
        max_lp = std::max(max_lp, lp);
        if (lp >= 0.0) {
          throw CrtError(ErrorCode::ProbabilityOverflow,
                         "log link produced success probability >= 1 (max linear predictor " +
                             std::to_string(max_lp) + ")");
        }
        pi = std::exp(lp);
      }
      y(j, l) = outcome_stream.bernoulli(pi) ? 1 : 0;
    }
  }
  return y;
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> apply_missingness(
    const ScenarioConfig& config, const Eigen::MatrixXd& covariates,
    const SeedSpec& seed) {
  config.check();
  const int rows = 2 * config.k;
  if (covariates.rows() != rows || covariates.cols() != config.m) {
    throw CrtError(ErrorCode::PlanInfeasible, "covariate matrix shape mismatch");
  }
  rng::Stream stream(seed.master_seed, seed.replication_index, rng::Role::Missingness);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> missing(rows, config.m);
  for (int j = 0; j < rows; ++j) {
    const int arm = j < config.k ? 0 : 1;
    const double psi = arm == 0 ? config.psi_control : config.psi_treat;
    const double phi = arm == 0 ? config.phi_control : config.phi_treat;
    for (int l = 0; l < config.m; ++l) {
      missing(j, l) = stream.bernoulli(stats::expit(psi + phi * covariates(j, l)));
    }
  }
  return missing;
}

namespace {

TrialDataset assemble(const ScenarioConfig& config, const Eigen::MatrixXd& x,
                      const Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>& y,
                      const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>* missing) {
  TrialDataset ds;
  ds.covariate_names = {"x"};
  ds.clusters.resize(2 * config.k);
  for (int j = 0; j < 2 * config.k; ++j) {
    const int arm = j < config.k ? 0 : 1;
    ClusterRecord& cluster = ds.clusters[j];
    cluster.cluster_id =
        (arm == 0 ? "c" : "t") + std::to_string(arm == 0 ? j + 1 : j - config.k + 1);
    cluster.arm = arm;
    cluster.outcomes.resize(config.m);
    cluster.covariates.resize(config.m, 1);
    for (int l = 0; l < config.m; ++l) {
      cluster.covariates(l, 0) = x(j, l);
      cluster.outcomes[l] =
          (missing != nullptr && (*missing)(j, l)) ? kMissingOutcome : y(j, l);
    }
  }
  return ds;
}

}  // namespace

TrialDataset generate_trial(const ScenarioConfig& config, const SeedSpec& seed) {
  return std::move(generate_trial_pair(config, seed).observed);
}

TrialPair generate_trial_pair(const ScenarioConfig& config, const SeedSpec& seed) {
  const Eigen::MatrixXd x = generate_covariates(config, seed);
  const auto y = generate_outcomes(config, x, seed);
  const auto missing = apply_missingness(config, x, seed);
  TrialPair pair;
  pair.full = assemble(config, x, y, nullptr);
  pair.observed = assemble(config, x, y, &missing);
  validate(pair.full);
  validate(pair.observed);
  return pair;
}

}  // namespace crtmiss

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "crtmiss/analysis_spec.hpp"
#include "crtmiss/datagen.hpp"
#include "crtmiss/methods.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

struct ImputationConfig {
  int n_imputations = 15;
  int burn_in = 100;
  int thinning = 25;
  bool include_interaction = false;
  std::vector<std::string> adjust_for = {"x"};
  double prior_variance_shape = 0.5;
  double prior_variance_scale = 0.5;
  SeedSpec seed;

  void check() const;
};

struct ImputationSet {
  std::vector<TrialDataset> completed;
  std::uint64_t master_seed = 0;
  std::uint64_t replication_index = 0;
  int burn_in = 0;
  int thinning = 0;
  std::vector<int> iteration_indices;  // chain iteration each copy was taken at
};

/// Gibbs sampler for the latent-normal (probit) random-intercept imputation
/// model. The imputation design is intercept + intervention + adjust_for
/// covariates (+ intervention x covariate when include_interaction). One call
/// to next() advances the chain (burn-in first, then `thinning` iterations)
/// and emits a completed dataset.
class ImputationChain {
 public:
  ImputationChain(const TrialDataset& dataset, const ImputationConfig& config,
                  const Eigen::VectorXd* covariate_means = nullptr);
  ~ImputationChain();
  ImputationChain(ImputationChain&&) noexcept;

  TrialDataset next();
  int iteration() const;
  bool nothing_missing() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// N completed copies of the dataset. With no missing outcome, returns N
/// identical copies without running the sampler.
ImputationSet impute(const TrialDataset& dataset, const ImputationConfig& config,
                     const Eigen::VectorXd* covariate_means = nullptr);

/// Rubin's rules with the small-sample degrees of freedom.
struct PooledEstimate {
  double estimate = 0.0;
  double within_var = 0.0;   // W
  double between_var = 0.0;  // B
  double total_var = 0.0;    // W + (1 + 1/N) B
  double nu = 0.0;           // large-sample MI df ((N-1)(1 + N/(N+1) W/B)^2)
  double nu_com = 0.0;       // complete-data df (2k - 2)
  double nu_obs_hat = 0.0;
  double nu_adj = 0.0;       // (nu^-1 + nu_obs^-1)^-1
  double ci_level = 0.95;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
};

PooledEstimate pool(std::span<const std::pair<double, double>> estimates_and_variances,
                    double nu_com, double ci_level = 0.95);

/// Analyses every completed dataset with `method` (as full data) and pools on
/// the estimation scale; nu_com = 2k-2 (minus d for cluster-level GEE terms).
/// A per-imputation failure is retried once with a freshly thinned draw;
/// more than 20% failed imputations aborts.
EffectEstimate mmi_analyze(const TrialDataset& dataset, const ImputationConfig& config,
                           Method method, const AnalysisSpec& spec,
                           double ci_level = 0.95,
                           const Eigen::VectorXd* covariate_means = nullptr);

/// Pooling over an existing imputation set (shared across methods by the
/// simulation harness). Failed imputations are dropped with the same 20%
/// budget; `fell_back` reports whether any per-imputation GEE fit fell back
/// to independence.
EffectEstimate mmi_pool_over_set(const ImputationSet& set, Method method,
                                 const AnalysisSpec& spec, double ci_level,
                                 const Eigen::VectorXd* covariate_means = nullptr,
                                 bool* fell_back = nullptr);

}  // namespace crtmiss

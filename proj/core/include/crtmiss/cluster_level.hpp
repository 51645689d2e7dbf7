#pragma once

#include <string>
#include <vector>

#include "crtmiss/analysis_spec.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

enum class Records { Full, Complete };

/// First-stage summary for one cluster. `predicted`, `diff_residual` and
/// `ratio_residual` are filled only by the adjusted estimators.
struct ClusterSummary {
  std::string cluster_id;
  int arm = 0;
  int observed = 0;   // number of individuals contributing
  int successes = 0;
  double proportion = 0.0;
  double predicted = 0.0;       // predicted successes over contributing individuals
  double diff_residual = 0.0;   // (successes - predicted) / observed
  double ratio_residual = 0.0;  // successes / predicted
};

/// Cluster proportions over contributing individuals. Under Records::Complete
/// the missing outcomes are excluded and clusters with no observed outcome are
/// dropped (the per-arm cluster counts shrink accordingly); under
/// Records::Full any missing outcome is an error.
/// Throws CrtError(EmptyArmAfterDrop) if dropping empties an arm.
std::vector<ClusterSummary> summarize_clusters(const TrialDataset& dataset,
                                               Records records);

/// p-bar_1 - p-bar_0 with a pooled two-sample t interval; df = clusters - 2.
EffectEstimate estimate_rd_unadjusted(const std::vector<ClusterSummary>& summaries,
                                      double ci_level = 0.95);

/// log(p-bar_1 / p-bar_0); variance s_0^2/(k_0 p-bar_0^2) + s_1^2/(k_1 p-bar_1^2);
/// df = clusters - 2.
EffectEstimate estimate_rr_unadjusted(const std::vector<ClusterSummary>& summaries,
                                      double ci_level = 0.95);

/// Covariate-adjusted cluster summaries: fits the first-stage logistic model
/// (covariates only, both arms pooled, contributing individuals only) and
/// fills predicted counts and residuals. Covariate columns that are constant
/// over the fitted rows are dropped from the first stage, so a constant
/// covariate collapses the adjusted estimators onto the unadjusted ones.
std::vector<ClusterSummary> summarize_clusters_adjusted(const TrialDataset& dataset,
                                                        const AnalysisSpec& spec,
                                                        Records records);

/// Difference-residual estimator of RD with pooled two-sample t inference.
EffectEstimate estimate_rd_adjusted(const TrialDataset& dataset, const AnalysisSpec& spec,
                                    Records records, double ci_level = 0.95);

/// Ratio-residual estimator of log RR.
EffectEstimate estimate_rr_adjusted(const TrialDataset& dataset, const AnalysisSpec& spec,
                                    Records records, double ci_level = 0.95);

/// Two-sample pooled-variance t interval on per-cluster values; shared by the
/// RD estimators and exposed for tests.
EffectEstimate pooled_t_interval(EffectScale scale, const std::vector<double>& arm0,
                                 const std::vector<double>& arm1, double ci_level);

}  // namespace crtmiss

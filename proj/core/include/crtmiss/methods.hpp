#pragma once

#include <string>

#include <Eigen/Core>

#include "crtmiss/analysis_spec.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

/// Analysis method identifiers shared by the harness, the pooling layer and
/// the command line.
enum class Method { ClU_Rd, ClU_Rr, ClA_Rd, ClA_Rr, Relr, GeeLogit, GeeLog };

EffectScale method_scale(Method method);
std::string to_string(Method method);
Method method_from_string(const std::string& name);
bool method_is_cluster_level(Method method);

struct MethodResult {
  EffectEstimate estimate;
  bool fell_back_to_independence = false;
  int d_cluster_level_params = 0;
};

/// Runs one method on a dataset treated as complete (every outcome observed).
MethodResult run_method_full(const TrialDataset& dataset, Method method,
                             const AnalysisSpec& spec, double ci_level,
                             const Eigen::VectorXd* covariate_means = nullptr);

/// Runs one method on the observed part of an incomplete dataset (complete
/// records analysis). Cluster counts for DF reflect retained clusters.
MethodResult run_method_cra(const TrialDataset& dataset, Method method,
                            const AnalysisSpec& spec, double ci_level,
                            const Eigen::VectorXd* covariate_means = nullptr);

}  // namespace crtmiss

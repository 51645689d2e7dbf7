#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crtmiss/analysis_spec.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

/// Individual-level regression data: intercept, intervention indicator,
/// covariates (centred if requested) and optional intervention x covariate
/// interactions. Rows are the individuals with observed outcomes, grouped by
/// cluster; clusters contributing no row are excluded.
struct ModelMatrix {
  Eigen::MatrixXd design;
  Eigen::VectorXd response;
  std::vector<int> cluster_sizes;  // rows per included cluster
  std::vector<int> cluster_arms;
  std::vector<std::string> term_names;
  int treatment_column = 1;
  int clusters_arm0 = 0;
  int clusters_arm1 = 0;
  /// Number of covariate/interaction parameters that are constant within
  /// every cluster (the "d" of the small-sample GEE df adjustment).
  int cluster_level_params = 0;

  double k_per_arm() const { return 0.5 * (clusters_arm0 + clusters_arm1); }
};

/// `covariate_means`, when given, supplies the centring constants (one per
/// adjusted covariate, in adjust_for order); otherwise the grand means of the
/// supplied dataset are used. Centring must use means over all individuals of
/// the pre-subsetting dataset, so callers analysing complete records pass the
/// means of the original dataset.
ModelMatrix build_model_matrix(const TrialDataset& dataset, const AnalysisSpec& spec,
                               const Eigen::VectorXd* covariate_means = nullptr);

/// Grand means of the spec's adjusted covariates over all individuals.
Eigen::VectorXd covariate_grand_means(const TrialDataset& dataset,
                                      const AnalysisSpec& spec);

}  // namespace crtmiss

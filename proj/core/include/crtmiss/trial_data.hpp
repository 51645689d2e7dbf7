#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace crtmiss {

/// Outcome sentinel for "missing".
inline constexpr std::int8_t kMissingOutcome = -1;

struct ClusterRecord {
  std::string cluster_id;
  int arm = 0;  // 0 = control, 1 = intervention
  std::vector<std::int8_t> outcomes;  // 0, 1, or kMissingOutcome
  Eigen::MatrixXd covariates;         // one row per individual

  int size() const { return static_cast<int>(outcomes.size()); }

  int observed_count() const {
    int n = 0;
    for (auto y : outcomes) n += (y != kMissingOutcome);
    return n;
  }

  int success_count() const {
    int n = 0;
    for (auto y : outcomes) n += (y == 1);
    return n;
  }
};

/// Clustered two-arm trial data with a binary (possibly missing) outcome and
/// fully observed covariates. Immutable by convention once validated; all
/// analysis operations take it by const reference.
struct TrialDataset {
  std::vector<ClusterRecord> clusters;
  std::vector<std::string> covariate_names;

  int clusters_in_arm(int arm) const;
  int total_individuals() const;
  int total_missing() const;
  std::optional<int> covariate_index(const std::string& name) const;

  /// Mean of one covariate over all individuals (observed and unobserved
  /// outcomes alike; covariates are always complete).
  double covariate_mean(int index) const;
};

/// Checks every dataset invariant and returns the dataset unchanged.
/// Throws CrtError(EmptyArm | NonBinaryOutcome | MissingCovariate) with a
/// message listing every violation and the offending cluster/individual.
const TrialDataset& validate(const TrialDataset& dataset);

/// Removes individuals with missing outcomes. Clusters left with no observed
/// outcome are retained with an empty individual list; downstream analyses
/// decide whether to drop them.
TrialDataset complete_records(const TrialDataset& dataset);

}  // namespace crtmiss

#pragma once

#include <vector>

#include "crtmiss/rng.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss::testing {

/// Random clustered dataset for property tests: balanced arms, one covariate
/// related to the outcome, optional covariate-dependent missingness.
inline TrialDataset random_dataset(std::uint64_t seed, int k_per_arm, int m,
                                   bool with_missing) {
  rng::Stream stream(seed, 0, rng::Role::Scratch);
  TrialDataset ds;
  ds.covariate_names = {"x"};
  for (int j = 0; j < 2 * k_per_arm; ++j) {
    ClusterRecord cluster;
    cluster.arm = j < k_per_arm ? 0 : 1;
    cluster.cluster_id = (cluster.arm == 0 ? "c" : "t") + std::to_string(j);
    const double alpha = stream.normal(0.0, 0.4);
    cluster.outcomes.resize(m);
    cluster.covariates.resize(m, 1);
    for (int l = 0; l < m; ++l) {
      const double x = stream.normal(0.0, 1.2);
      cluster.covariates(l, 0) = x;
      const double lp = -0.2 + 0.8 * cluster.arm + 0.7 * x + alpha;
      const double p = 1.0 / (1.0 + std::exp(-lp));
      std::int8_t y = stream.bernoulli(p) ? 1 : 0;
      if (with_missing && stream.bernoulli(1.0 / (1.0 + std::exp(-(-1.1 + 0.8 * x))))) {
        y = kMissingOutcome;
      }
      cluster.outcomes[l] = y;
    }
    ds.clusters.push_back(std::move(cluster));
  }
  return ds;
}

}  // namespace crtmiss::testing

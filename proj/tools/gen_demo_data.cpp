// Generates the synthetic demo dataset shipped under data/. Two merged
// intervention groups, ~100 school-like clusters, a continuous age covariate
// and a binary baseline covariate, ~18% of outcomes missing dependent on age.
// The intervention effect is deliberately near null.

#include <iostream>

#include "crtmiss/csv_io.hpp"
#include "crtmiss/rng.hpp"
#include "crtmiss/stats.hpp"
#include "crtmiss/trial_data.hpp"

using namespace crtmiss;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "data/demo_trial.csv";
  rng::Stream stream(97531, 0, rng::Role::Scratch);

  TrialDataset ds;
  ds.covariate_names = {"age", "baseline_marker"};
  const int n_clusters = 101;
  for (int j = 0; j < n_clusters; ++j) {
    ClusterRecord cluster;
    cluster.arm = j % 2;
    cluster.cluster_id = "school" + std::to_string(j + 1);
    const int m = 85 + static_cast<int>(stream.uniform() * 30);  // 85..114
    const double school_effect = stream.normal(0.0, 0.35);
    const double school_age_shift = stream.normal(0.0, 0.6);
    cluster.outcomes.resize(m);
    cluster.covariates.resize(m, 2);
    for (int l = 0; l < m; ++l) {
      const double age = 9.5 + school_age_shift + stream.normal(0.0, 2.2);
      const double marker =
          stream.bernoulli(stats::expit(-0.5 + 0.08 * (age - 9.5))) ? 1.0 : 0.0;
      cluster.covariates(l, 0) = age;
      cluster.covariates(l, 1) = marker;
      const double lp = -0.9 + 0.05 * cluster.arm + 0.09 * (age - 9.5) +
                        1.1 * marker + school_effect;
      std::int8_t y = stream.bernoulli(stats::expit(lp)) ? 1 : 0;
      // covariate-dependent missingness through age only, ~18% overall
      if (stream.bernoulli(stats::expit(-1.55 + 0.07 * (age - 9.5)))) {
        y = kMissingOutcome;
      }
      cluster.outcomes[l] = y;
    }
    ds.clusters.push_back(std::move(cluster));
  }

  validate(ds);
  write_dataset_csv_file(ds, out);
  std::cerr << "wrote " << out << ": " << ds.clusters.size() << " clusters, "
            << ds.total_individuals() << " individuals, " << ds.total_missing()
            << " missing outcomes\n";
  return 0;
}

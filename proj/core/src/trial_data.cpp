#include "crtmiss/trial_data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crtmiss/errors.hpp"

namespace crtmiss {

int TrialDataset::clusters_in_arm(int arm) const {
  int n = 0;
  for (const auto& c : clusters) n += (c.arm == arm);
  return n;
}

int TrialDataset::total_individuals() const {
  int n = 0;
  for (const auto& c : clusters) n += c.size();
  return n;
}

int TrialDataset::total_missing() const {
  int n = 0;
  for (const auto& c : clusters) n += c.size() - c.observed_count();
  return n;
}

std::optional<int> TrialDataset::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) return std::nullopt;
  return static_cast<int>(it - covariate_names.begin());
}

double TrialDataset::covariate_mean(int index) const {
  double sum = 0.0;
  long n = 0;
  for (const auto& c : clusters) {
    sum += c.covariates.col(index).sum();
    n += c.covariates.rows();
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

const TrialDataset& validate(const TrialDataset& dataset) {
  std::vector<std::string> violations;
  ErrorCode first_code = ErrorCode::EmptyArm;
  bool any = false;
  auto add = [&](ErrorCode code, const std::string& what) {
    if (!any) {
      first_code = code;
      any = true;
    }
    violations.push_back(what);
  };

  for (int arm : {0, 1}) {
    if (dataset.clusters_in_arm(arm) == 0) {
      add(ErrorCode::EmptyArm, "arm " + std::to_string(arm) + " has no clusters");
    }
  }

  const auto n_cov = static_cast<Eigen::Index>(dataset.covariate_names.size());
  for (const auto& cluster : dataset.clusters) {
    if (cluster.arm != 0 && cluster.arm != 1) {
      add(ErrorCode::NonBinaryOutcome,
          "cluster " + cluster.cluster_id + ": arm label must be 0 or 1");
    }
    if (cluster.outcomes.empty()) {
      add(ErrorCode::NonBinaryOutcome,
          "cluster " + cluster.cluster_id + ": no individuals");
    }
    if (cluster.covariates.rows() != cluster.size() ||
        cluster.covariates.cols() != n_cov) {
      add(ErrorCode::MissingCovariate,
          "cluster " + cluster.cluster_id + ": covariate matrix is " +
              std::to_string(cluster.covariates.rows()) + "x" +
              std::to_string(cluster.covariates.cols()) + ", expected " +
              std::to_string(cluster.size()) + "x" + std::to_string(n_cov));
      continue;
    }
    for (int l = 0; l < cluster.size(); ++l) {
      const auto y = cluster.outcomes[l];
      if (y != 0 && y != 1 && y != kMissingOutcome) {
        add(ErrorCode::NonBinaryOutcome,
            "cluster " + cluster.cluster_id + ", individual " + std::to_string(l) +
                ": outcome " + std::to_string(static_cast<int>(y)) +
                " is not 0, 1, or missing");
      }
      for (Eigen::Index c = 0; c < n_cov; ++c) {
        if (!std::isfinite(cluster.covariates(l, c))) {
          add(ErrorCode::MissingCovariate,
              "cluster " + cluster.cluster_id + ", individual " + std::to_string(l) +
                  ": covariate '" + dataset.covariate_names[c] +
                  "' is missing or non-finite");
        }
      }
    }
  }

  if (any) {
    std::ostringstream msg;
    msg << "invalid trial dataset (" << violations.size() << " violation"
        << (violations.size() == 1 ? "" : "s") << "):";
    for (const auto& v : violations) msg << "\n  - " << v;
    throw CrtError(first_code, msg.str());
  }
  return dataset;
}

TrialDataset complete_records(const TrialDataset& dataset) {
  TrialDataset out;
  out.covariate_names = dataset.covariate_names;
  out.clusters.reserve(dataset.clusters.size());
  for (const auto& cluster : dataset.clusters) {
    ClusterRecord kept;
    kept.cluster_id = cluster.cluster_id;
    kept.arm = cluster.arm;
    const int n_obs = cluster.observed_count();
    kept.outcomes.reserve(n_obs);
    kept.covariates.resize(n_obs, cluster.covariates.cols());
    int r = 0;
    for (int l = 0; l < cluster.size(); ++l) {
      if (cluster.outcomes[l] == kMissingOutcome) continue;
      kept.outcomes.push_back(cluster.outcomes[l]);
      kept.covariates.row(r++) = cluster.covariates.row(l);
    }
    out.clusters.push_back(std::move(kept));
  }
  return out;
}

}  // namespace crtmiss

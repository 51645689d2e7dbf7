#include "crtmiss/cluster_level.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "crtmiss/errors.hpp"
#include "crtmiss/glm.hpp"
#include "crtmiss/stats.hpp"

namespace crtmiss {

namespace {

void require_no_missing(const TrialDataset& dataset) {
  for (const auto& cluster : dataset.clusters) {
    if (cluster.observed_count() != cluster.size()) {
      throw CrtError(ErrorCode::NonBinaryOutcome,
                     "full-records analysis requested but cluster " + cluster.cluster_id +
                         " has missing outcomes");
    }
  }
}

std::vector<double> arm_values(const std::vector<ClusterSummary>& summaries, int arm,
                               double ClusterSummary::*field) {
  std::vector<double> values;
  values.reserve(summaries.size());
  for (const auto& s : summaries) {
    if (s.arm == arm) values.push_back(s.*field);
  }
  return values;
}

void require_clusters(const std::vector<double>& arm0, const std::vector<double>& arm1) {
  if (arm0.size() < 2 || arm1.size() < 2) {
    throw CrtError(ErrorCode::TooFewClusters,
                   "need at least 2 clusters per arm (have " +
                       std::to_string(arm0.size()) + " and " +
                       std::to_string(arm1.size()) + ")");
  }
}

/// Columns of the covariate design used by the first stage: the requested
/// covariates minus any that are constant over the contributing rows.
struct FirstStage {
  GlmFit fit;
  std::vector<int> columns;  // dataset covariate indices kept
  bool intercept_only = false;
};

FirstStage fit_first_stage(const TrialDataset& dataset, const AnalysisSpec& spec,
                           Records records) {
  if (spec.adjust_for.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible,
                   "adjusted cluster-level analysis requires adjust_for covariates");
  }
  std::vector<int> requested;
  for (const auto& name : spec.adjust_for) {
    auto idx = dataset.covariate_index(name);
    if (!idx) {
      throw CrtError(ErrorCode::PlanInfeasible, "unknown covariate '" + name + "'");
    }
    requested.push_back(*idx);
  }

  // Gather contributing rows.
  long n = 0;
  for (const auto& cluster : dataset.clusters) {
    n += records == Records::Full ? cluster.size() : cluster.observed_count();
  }
  Eigen::MatrixXd covs(n, static_cast<Eigen::Index>(requested.size()));
  Eigen::VectorXd y(n);
  long r = 0;
  for (const auto& cluster : dataset.clusters) {
    for (int l = 0; l < cluster.size(); ++l) {
      if (records == Records::Complete && cluster.outcomes[l] == kMissingOutcome) continue;
      y(r) = cluster.outcomes[l];
      for (std::size_t c = 0; c < requested.size(); ++c) {
        covs(r, static_cast<Eigen::Index>(c)) = cluster.covariates(l, requested[c]);
      }
      ++r;
    }
  }

  // Drop zero-variance columns; an all-constant set degrades to intercept-only.
  std::vector<int> kept;
  std::vector<Eigen::Index> kept_pos;
  for (std::size_t c = 0; c < requested.size(); ++c) {
    const auto col = covs.col(static_cast<Eigen::Index>(c));
    if ((col.array() - col(0)).abs().maxCoeff() > 0.0) {
      kept.push_back(requested[c]);
      kept_pos.push_back(static_cast<Eigen::Index>(c));
    }
  }
  Eigen::MatrixXd design(n, 1 + static_cast<Eigen::Index>(kept.size()));
  design.col(0).setOnes();
  for (std::size_t c = 0; c < kept_pos.size(); ++c) {
    design.col(1 + static_cast<Eigen::Index>(c)) = covs.col(kept_pos[c]);
  }

  FirstStage stage;
  stage.columns = kept;
  stage.intercept_only = kept.empty();
  stage.fit = fit_glm(design, y, Link::Logit);
  return stage;
}

std::vector<ClusterSummary> summarize_impl(const TrialDataset& dataset, Records records,
                                           const FirstStage* stage) {
  if (records == Records::Full) require_no_missing(dataset);
  std::vector<ClusterSummary> summaries;
  summaries.reserve(dataset.clusters.size());
  for (const auto& cluster : dataset.clusters) {
    ClusterSummary s;
    s.cluster_id = cluster.cluster_id;
    s.arm = cluster.arm;
    s.observed = records == Records::Full ? cluster.size() : cluster.observed_count();
    if (s.observed == 0) continue;  // cluster dropped under complete records
    double predicted = 0.0;
    for (int l = 0; l < cluster.size(); ++l) {
      if (records == Records::Complete && cluster.outcomes[l] == kMissingOutcome) continue;
      s.successes += cluster.outcomes[l] == 1;
      if (stage != nullptr) {
        double eta = stage->fit.coefficients(0);
        for (std::size_t c = 0; c < stage->columns.size(); ++c) {
          eta += stage->fit.coefficients(1 + static_cast<Eigen::Index>(c)) *
                 cluster.covariates(l, stage->columns[c]);
        }
        predicted += stats::expit(eta);
      }
    }
    s.proportion = static_cast<double>(s.successes) / s.observed;
    if (stage != nullptr) {
      s.predicted = predicted;
      s.diff_residual = (s.successes - predicted) / s.observed;
      if (predicted <= 0.0) {
        throw CrtError(ErrorCode::ZeroPrediction,
                       "cluster " + cluster.cluster_id + " has zero predicted successes");
      }
      s.ratio_residual = s.successes / predicted;
    }
    summaries.push_back(std::move(s));
  }
  for (int arm : {0, 1}) {
    bool present = false;
    for (const auto& s : summaries) present |= (s.arm == arm);
    if (!present) {
      throw CrtError(ErrorCode::EmptyArmAfterDrop,
                     "arm " + std::to_string(arm) +
                         " has no clusters with observed outcomes");
    }
  }
  return summaries;
}

}  // namespace

std::vector<ClusterSummary> summarize_clusters(const TrialDataset& dataset,
                                               Records records) {
  return summarize_impl(dataset, records, nullptr);
}

std::vector<ClusterSummary> summarize_clusters_adjusted(const TrialDataset& dataset,
                                                        const AnalysisSpec& spec,
                                                        Records records) {
  const FirstStage stage = fit_first_stage(dataset, spec, records);
  return summarize_impl(dataset, records, &stage);
}

EffectEstimate pooled_t_interval(EffectScale scale, const std::vector<double>& arm0,
                                 const std::vector<double>& arm1, double ci_level) {
  require_clusters(arm0, arm1);
  const double k0 = static_cast<double>(arm0.size());
  const double k1 = static_cast<double>(arm1.size());
  const double mean0 = stats::mean(arm0);
  const double mean1 = stats::mean(arm1);
  const double pooled =
      ((k0 - 1.0) * stats::sample_variance(arm0) + (k1 - 1.0) * stats::sample_variance(arm1)) /
      (k0 + k1 - 2.0);
  const double se = std::sqrt(pooled * (1.0 / k0 + 1.0 / k1));
  const double df = k0 + k1 - 2.0;
  return make_t_interval(scale, mean1 - mean0, se, df, ci_level);
}

EffectEstimate estimate_rd_unadjusted(const std::vector<ClusterSummary>& summaries,
                                      double ci_level) {
  const auto arm0 = arm_values(summaries, 0, &ClusterSummary::proportion);
  const auto arm1 = arm_values(summaries, 1, &ClusterSummary::proportion);
  return pooled_t_interval(EffectScale::RiskDifference, arm0, arm1, ci_level);
}

namespace {

EffectEstimate log_ratio_interval(const std::vector<double>& arm0,
                                  const std::vector<double>& arm1, double ci_level,
                                  ErrorCode zero_code, const char* what) {
  require_clusters(arm0, arm1);
  const double mean0 = stats::mean(arm0);
  const double mean1 = stats::mean(arm1);
  if (mean0 <= 0.0 || mean1 <= 0.0) {
    throw CrtError(zero_code, std::string("arm mean ") + what + " is zero");
  }
  const double k0 = static_cast<double>(arm0.size());
  const double k1 = static_cast<double>(arm1.size());
  const double var = stats::sample_variance(arm0) / (k0 * mean0 * mean0) +
                     stats::sample_variance(arm1) / (k1 * mean1 * mean1);
  const double df = k0 + k1 - 2.0;
  return make_t_interval(EffectScale::LogRiskRatio, std::log(mean1 / mean0),
                         std::sqrt(var), df, ci_level);
}

}  // namespace

EffectEstimate estimate_rr_unadjusted(const std::vector<ClusterSummary>& summaries,
                                      double ci_level) {
  const auto arm0 = arm_values(summaries, 0, &ClusterSummary::proportion);
  const auto arm1 = arm_values(summaries, 1, &ClusterSummary::proportion);
  return log_ratio_interval(arm0, arm1, ci_level, ErrorCode::ZeroMeanProportion,
                            "proportion");
}

EffectEstimate estimate_rd_adjusted(const TrialDataset& dataset, const AnalysisSpec& spec,
                                    Records records, double ci_level) {
  const auto summaries = summarize_clusters_adjusted(dataset, spec, records);
  const auto arm0 = arm_values(summaries, 0, &ClusterSummary::diff_residual);
  const auto arm1 = arm_values(summaries, 1, &ClusterSummary::diff_residual);
  return pooled_t_interval(EffectScale::RiskDifference, arm0, arm1, ci_level);
}

EffectEstimate estimate_rr_adjusted(const TrialDataset& dataset, const AnalysisSpec& spec,
                                    Records records, double ci_level) {
  const auto summaries = summarize_clusters_adjusted(dataset, spec, records);
  const auto arm0 = arm_values(summaries, 0, &ClusterSummary::ratio_residual);
  const auto arm1 = arm_values(summaries, 1, &ClusterSummary::ratio_residual);
  return log_ratio_interval(arm0, arm1, ci_level, ErrorCode::ZeroMeanResidual,
                            "ratio-residual");
}

}  // namespace crtmiss

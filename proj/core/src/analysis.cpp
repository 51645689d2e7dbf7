#include "crtmiss/analysis_spec.hpp"

#include <cmath>

#include "crtmiss/errors.hpp"
#include "crtmiss/model_matrix.hpp"
#include "crtmiss/stats.hpp"

namespace crtmiss {

void AnalysisSpec::check() const {
  if (include_interaction && adjust_for.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible,
                   "include_interaction requires adjust_for covariates");
  }
  if (include_interaction && !center_covariates) {
    throw CrtError(ErrorCode::PlanInfeasible,
                   "include_interaction requires center_covariates");
  }
}

std::string to_string(EffectScale scale) {
  switch (scale) {
    case EffectScale::RiskDifference: return "RD";
    case EffectScale::LogRiskRatio: return "logRR";
    case EffectScale::LogOddsConditional: return "logOR_conditional";
    case EffectScale::LogOddsMarginal: return "logOR_marginal";
  }
  return "?";
}

EffectEstimate make_t_interval(EffectScale scale, double estimate, double se, double df,
                               double ci_level, bool converged) {
  EffectEstimate e;
  e.scale = scale;
  e.estimate = estimate;
  e.se = se;
  e.df = df;
  e.ci_level = ci_level;
  const double t = stats::student_t_quantile(df, 0.5 + ci_level / 2.0);
  e.ci_lower = estimate - t * se;
  e.ci_upper = estimate + t * se;
  e.converged = converged;
  return e;
}

Eigen::VectorXd covariate_grand_means(const TrialDataset& dataset,
                                      const AnalysisSpec& spec) {
  Eigen::VectorXd means(static_cast<Eigen::Index>(spec.adjust_for.size()));
  for (std::size_t c = 0; c < spec.adjust_for.size(); ++c) {
    auto idx = dataset.covariate_index(spec.adjust_for[c]);
    if (!idx) {
      throw CrtError(ErrorCode::PlanInfeasible,
                     "unknown covariate '" + spec.adjust_for[c] + "'");
    }
    means(static_cast<Eigen::Index>(c)) = dataset.covariate_mean(*idx);
  }
  return means;
}

ModelMatrix build_model_matrix(const TrialDataset& dataset, const AnalysisSpec& spec,
                               const Eigen::VectorXd* covariate_means) {
  spec.check();
  const auto n_cov = static_cast<Eigen::Index>(spec.adjust_for.size());
  std::vector<int> cov_idx(spec.adjust_for.size());
  for (std::size_t c = 0; c < spec.adjust_for.size(); ++c) {
    auto idx = dataset.covariate_index(spec.adjust_for[c]);
    if (!idx) {
      throw CrtError(ErrorCode::PlanInfeasible,
                     "unknown covariate '" + spec.adjust_for[c] + "'");
    }
    cov_idx[c] = *idx;
  }

  Eigen::VectorXd centres = Eigen::VectorXd::Zero(n_cov);
  if (spec.center_covariates) {
    if (covariate_means != nullptr) {
      if (covariate_means->size() != n_cov) {
        throw CrtError(ErrorCode::PlanInfeasible,
                       "covariate_means length does not match adjust_for");
      }
      centres = *covariate_means;
    } else {
      centres = covariate_grand_means(dataset, spec);
    }
  }

  long n_rows = 0;
  for (const auto& cluster : dataset.clusters) n_rows += cluster.observed_count();

  const Eigen::Index p = 2 + n_cov + (spec.include_interaction ? n_cov : 0);
  ModelMatrix mm;
  mm.design.resize(n_rows, p);
  mm.response.resize(n_rows);
  mm.term_names.push_back("(intercept)");
  mm.term_names.push_back("intervention");
  for (const auto& name : spec.adjust_for) mm.term_names.push_back(name);
  if (spec.include_interaction) {
    for (const auto& name : spec.adjust_for) {
      mm.term_names.push_back("intervention:" + name);
    }
  }

  long r = 0;
  for (const auto& cluster : dataset.clusters) {
    const int n_obs = cluster.observed_count();
    if (n_obs == 0) continue;
    mm.cluster_sizes.push_back(n_obs);
    mm.cluster_arms.push_back(cluster.arm);
    (cluster.arm == 0 ? mm.clusters_arm0 : mm.clusters_arm1) += 1;
    for (int l = 0; l < cluster.size(); ++l) {
      if (cluster.outcomes[l] == kMissingOutcome) continue;
      mm.design(r, 0) = 1.0;
      mm.design(r, 1) = cluster.arm;
      for (Eigen::Index c = 0; c < n_cov; ++c) {
        const double x = cluster.covariates(l, cov_idx[c]) - centres(c);
        mm.design(r, 2 + c) = x;
        if (spec.include_interaction) mm.design(r, 2 + n_cov + c) = cluster.arm * x;
      }
      mm.response(r) = cluster.outcomes[l];
      ++r;
    }
  }

  // Count cluster-level parameters: covariate terms that never vary within a
  // cluster (interactions with them are cluster-level too, since arm is).
  for (Eigen::Index c = 0; c < n_cov; ++c) {
    bool within_constant = true;
    for (const auto& cluster : dataset.clusters) {
      if (cluster.size() == 0) continue;
      const auto col = cluster.covariates.col(cov_idx[c]);
      if ((col.array() - col(0)).abs().maxCoeff() > 0.0) {
        within_constant = false;
        break;
      }
    }
    if (within_constant) {
      mm.cluster_level_params += spec.include_interaction ? 2 : 1;
    }
  }
  return mm;
}

}  // namespace crtmiss

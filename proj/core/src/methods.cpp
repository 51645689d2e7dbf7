#include "crtmiss/methods.hpp"

#include <algorithm>
#include <cctype>

#include "crtmiss/cluster_level.hpp"
#include "crtmiss/errors.hpp"
#include "crtmiss/gee.hpp"
#include "crtmiss/relr.hpp"

namespace crtmiss {

EffectScale method_scale(Method method) {
  switch (method) {
    case Method::ClU_Rd:
    case Method::ClA_Rd: return EffectScale::RiskDifference;
    case Method::ClU_Rr:
    case Method::ClA_Rr:
    case Method::GeeLog: return EffectScale::LogRiskRatio;
    case Method::Relr: return EffectScale::LogOddsConditional;
    case Method::GeeLogit: return EffectScale::LogOddsMarginal;
  }
  return EffectScale::RiskDifference;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::ClU_Rd: return "CL_U-RD";
    case Method::ClU_Rr: return "CL_U-RR";
    case Method::ClA_Rd: return "CL_A-RD";
    case Method::ClA_Rr: return "CL_A-RR";
    case Method::Relr: return "RELR";
    case Method::GeeLogit: return "GEE-logit";
    case Method::GeeLog: return "GEE-log";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (key == "cl_u-rd") return Method::ClU_Rd;
  if (key == "cl_u-rr") return Method::ClU_Rr;
  if (key == "cl_a-rd") return Method::ClA_Rd;
  if (key == "cl_a-rr") return Method::ClA_Rr;
  if (key == "relr") return Method::Relr;
  if (key == "gee-logit") return Method::GeeLogit;
  if (key == "gee-log") return Method::GeeLog;
  throw CrtError(ErrorCode::PlanInfeasible, "unknown method '" + name + "'");
}

bool method_is_cluster_level(Method method) {
  switch (method) {
    case Method::ClU_Rd:
    case Method::ClU_Rr:
    case Method::ClA_Rd:
    case Method::ClA_Rr: return true;
    default: return false;
  }
}

namespace {

MethodResult run_method(const TrialDataset& dataset, Method method,
                        const AnalysisSpec& spec, Records records, double ci_level,
                        const Eigen::VectorXd* covariate_means) {
  MethodResult out;
  switch (method) {
    case Method::ClU_Rd: {
      const auto summaries = summarize_clusters(dataset, records);
      out.estimate = estimate_rd_unadjusted(summaries, ci_level);
      return out;
    }
    case Method::ClU_Rr: {
      const auto summaries = summarize_clusters(dataset, records);
      out.estimate = estimate_rr_unadjusted(summaries, ci_level);
      return out;
    }
    case Method::ClA_Rd: {
      out.estimate = estimate_rd_adjusted(dataset, spec, records, ci_level);
      return out;
    }
    case Method::ClA_Rr: {
      out.estimate = estimate_rr_adjusted(dataset, spec, records, ci_level);
      return out;
    }
    case Method::Relr: {
      RelrOptions options;
      options.covariate_means = covariate_means;
      const RelrFit fit = fit_relr(dataset, spec, options);
      out.estimate = relr_interval(fit, fit.k_per_arm(), ci_level);
      return out;
    }
    case Method::GeeLogit:
    case Method::GeeLog: {
      AnalysisSpec gee_spec = spec;
      gee_spec.link = method == Method::GeeLogit ? Link::Logit : Link::Log;
      const GeeFit fit = fit_gee(dataset, gee_spec, covariate_means);
      out.estimate =
          corrected_interval(fit, fit.k_per_arm(), fit.cluster_level_params, ci_level);
      out.fell_back_to_independence = fit.fell_back_to_independence;
      out.d_cluster_level_params = fit.cluster_level_params;
      return out;
    }
  }
  throw CrtError(ErrorCode::PlanInfeasible, "unhandled method");
}

}  // namespace

MethodResult run_method_full(const TrialDataset& dataset, Method method,
                             const AnalysisSpec& spec, double ci_level,
                             const Eigen::VectorXd* covariate_means) {
  if (dataset.total_missing() > 0) {
    throw CrtError(ErrorCode::NonBinaryOutcome,
                   "full-data analysis requested on a dataset with missing outcomes");
  }
  return run_method(dataset, method, spec, Records::Full, ci_level, covariate_means);
}

MethodResult run_method_cra(const TrialDataset& dataset, Method method,
                            const AnalysisSpec& spec, double ci_level,
                            const Eigen::VectorXd* covariate_means) {
  // Individual-level fits drop missing rows themselves; cluster-level
  // estimators are told to use complete records.
  return run_method(dataset, method, spec, Records::Complete, ci_level, covariate_means);
}

}  // namespace crtmiss

#pragma once

#include <string>
#include <vector>

namespace crtmiss {

enum class Link { Logit, Log };

enum class WorkingCorrelation { Exchangeable, Independence };

/// How an individual-level or adjusted analysis should be specified.
/// include_interaction adds intervention x covariate terms and requires the
/// covariates to be centred (at the grand mean over all individuals) so that
/// the intervention coefficient is the effect at the covariate mean.
struct AnalysisSpec {
  std::vector<std::string> adjust_for;
  bool include_interaction = false;
  bool center_covariates = false;
  Link link = Link::Logit;
  WorkingCorrelation working_correlation = WorkingCorrelation::Exchangeable;

  void check() const;  // enforces the interaction/centering invariants
};

enum class EffectScale { RiskDifference, LogRiskRatio, LogOddsConditional, LogOddsMarginal };

std::string to_string(EffectScale scale);

/// A point estimate on a named scale with t-based interval.
struct EffectEstimate {
  EffectScale scale = EffectScale::RiskDifference;
  double estimate = 0.0;
  double se = 0.0;
  double df = 1.0;
  double ci_level = 0.95;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  bool converged = true;
};

/// estimate +/- t_{df,1-alpha/2} * se.
EffectEstimate make_t_interval(EffectScale scale, double estimate, double se,
                               double df, double ci_level, bool converged = true);

}  // namespace crtmiss

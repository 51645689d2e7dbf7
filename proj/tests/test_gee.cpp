#include <doctest.h>

#include <cmath>

#include "crtmiss/datagen.hpp"
#include "crtmiss/errors.hpp"
#include "crtmiss/gee.hpp"
#include "crtmiss/glm.hpp"
#include "crtmiss/model_matrix.hpp"
#include "crtmiss/stats.hpp"
#include "test_helpers.hpp"

using namespace crtmiss;

TEST_CASE("independence working GEE equals the ordinary logistic fit") {
  const TrialDataset ds = testing::random_dataset(401, 5, 20, false);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  spec.working_correlation = WorkingCorrelation::Independence;
  const GeeFit fit = fit_gee(ds, spec);
  const ModelMatrix mm = build_model_matrix(ds, spec);
  const GlmFit glm = fit_glm(mm.design, mm.response, Link::Logit);
  for (int c = 0; c < glm.coefficients.size(); ++c) {
    CHECK(fit.coefficients(c) == doctest::Approx(glm.coefficients(c)).epsilon(1e-8));
  }
  CHECK(fit.alpha_hat == 0.0);
}

TEST_CASE("single-individual clusters force alpha to zero and match independence") {
  TrialDataset ds;
  ds.covariate_names = {"x"};
  rng::Stream stream(402, 0, rng::Role::Scratch);
  for (int j = 0; j < 40; ++j) {
    ClusterRecord c;
    c.cluster_id = "s" + std::to_string(j);
    c.arm = j < 20 ? 0 : 1;
    c.outcomes = {static_cast<std::int8_t>(stream.bernoulli(0.4 + 0.2 * c.arm) ? 1 : 0)};
    c.covariates.resize(1, 1);
    c.covariates(0, 0) = stream.normal();
    ds.clusters.push_back(c);
  }
  AnalysisSpec exch;
  exch.adjust_for = {"x"};
  const GeeFit fit = fit_gee(ds, exch);
  CHECK(fit.alpha_hat == 0.0);
  AnalysisSpec indep = exch;
  indep.working_correlation = WorkingCorrelation::Independence;
  const GeeFit ref = fit_gee(ds, indep);
  for (int c = 0; c < ref.coefficients.size(); ++c) {
    CHECK(fit.coefficients(c) == doctest::Approx(ref.coefficients(c)).epsilon(1e-8));
  }
}

TEST_CASE("estimating function vanishes at the solution") {
  const TrialDataset ds = testing::random_dataset(403, 8, 25, false);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  const GeeFit fit = fit_gee(ds, spec);
  CHECK(fit.converged);
  CHECK(gee_estimating_residual(ds, spec, fit) < 1e-6);
  CHECK(fit.alpha_hat >= 0.0);
  CHECK(fit.alpha_hat < 1.0);
}

TEST_CASE("corrected interval arithmetic") {
  GeeFit fit;
  fit.coefficients = (Eigen::VectorXd(2) << 0.0, 1.0).finished();
  fit.sandwich_cov = Eigen::MatrixXd::Zero(2, 2);
  fit.sandwich_cov(1, 1) = 0.16;  // raw sandwich SE 0.40
  fit.treatment_column = 1;
  fit.converged = true;
  fit.link = Link::Logit;

  SUBCASE("sqrt(k/(k-1)) inflation at k = 5") {
    const EffectEstimate e = corrected_interval(fit, 5, 0, 0.95);
    CHECK(e.se == doctest::Approx(0.4 * std::sqrt(5.0 / 4.0)).epsilon(1e-12));
    CHECK(e.se == doctest::Approx(0.4472135954999579).epsilon(1e-12));
    CHECK(e.scale == EffectScale::LogOddsMarginal);
  }
  SUBCASE("df = 2k-2-d") {
    CHECK(corrected_interval(fit, 50, 0, 0.95).df == doctest::Approx(98.0));
    CHECK(corrected_interval(fit, 50, 3, 0.95).df == doctest::Approx(95.0));
  }
  SUBCASE("non-positive df raises") {
    try {
      (void)corrected_interval(fit, 2, 2, 0.95);
      FAIL("expected NonPositiveDf");
    } catch (const CrtError& e) {
      CHECK(e.code() == ErrorCode::NonPositiveDf);
    }
  }
  SUBCASE("log link reports the risk-ratio scale") {
    fit.link = Link::Log;
    CHECK(corrected_interval(fit, 5, 0, 0.95).scale == EffectScale::LogRiskRatio);
  }
}

TEST_CASE("cluster-level covariates are counted for the df reduction") {
  TrialDataset ds = testing::random_dataset(404, 4, 15, false);
  ds.covariate_names = {"x", "site_score"};
  rng::Stream stream(405, 0, rng::Role::Scratch);
  for (auto& cluster : ds.clusters) {
    Eigen::MatrixXd covs(cluster.size(), 2);
    covs.col(0) = cluster.covariates.col(0);
    covs.col(1).setConstant(stream.normal());  // constant within the cluster
    cluster.covariates = covs;
  }
  AnalysisSpec spec;
  spec.adjust_for = {"x", "site_score"};
  const GeeFit fit = fit_gee(ds, spec);
  CHECK(fit.cluster_level_params == 1);
}

TEST_CASE("sandwich SE tracks the Monte Carlo spread on simulated data") {
  ScenarioConfig config = builtin_scenario("S1");
  config.k = 50;
  config.m = 50;
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  const int reps = 150;
  std::vector<double> estimates, ses;
  for (int r = 0; r < reps; ++r) {
    const TrialDataset ds =
        generate_trial_pair(config, SeedSpec{606, static_cast<std::uint64_t>(r)}).full;
    const GeeFit fit = fit_gee(ds, spec);
    const EffectEstimate e = corrected_interval(fit, fit.k_per_arm(), 0, 0.95);
    estimates.push_back(e.estimate);
    ses.push_back(e.se);
  }
  const double mc_sd = std::sqrt(stats::sample_variance(estimates));
  const double avg_se = stats::mean(ses);
  CHECK(avg_se == doctest::Approx(mc_sd).epsilon(0.10));
}

TEST_CASE("full-data GEE sits below RELR (attenuation) on one dataset") {
  ScenarioConfig config = builtin_scenario("S1");
  config.k = 50;
  config.m = 50;
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  const TrialDataset ds = generate_trial_pair(config, SeedSpec{707, 1}).full;
  const GeeFit gee = fit_gee(ds, spec);
  CHECK(gee.alpha_hat > 0.0);  // clustered outcomes should show correlation
  CHECK(gee.coefficients(1) > 0.5);
  CHECK(gee.coefficients(1) < 2.0);
}

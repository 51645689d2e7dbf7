#include <doctest.h>

#include <cmath>
#include <functional>

#include "crtmiss/datagen.hpp"
#include "crtmiss/glm.hpp"
#include "crtmiss/model_matrix.hpp"
#include "crtmiss/relr.hpp"
#include "crtmiss/stats.hpp"
#include "test_helpers.hpp"

using namespace crtmiss;

namespace {

double simpson(const std::function<double(double)>& f, double a, double b, double fa,
               double fb, double fm, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double flm = f(0.5 * (a + m));
  const double frm = f(0.5 * (m + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson(f, a, m, fa, fm, flm, tol / 2.0, depth - 1) +
         simpson(f, m, b, fm, fb, frm, tol / 2.0, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
  const double m = 0.5 * (a + b);
  return simpson(f, a, b, f(a), f(b), f(m), 1e-9, 60);
}

TrialDataset toy_two_clusters() {
  TrialDataset ds;
  ds.covariate_names = {"x"};
  ClusterRecord c0;
  c0.cluster_id = "c";
  c0.arm = 0;
  c0.outcomes = {1, 0, 1, 0, 0, 1};
  c0.covariates.resize(6, 1);
  c0.covariates << 0.3, -0.8, 1.1, 0.0, -0.4, 0.9;
  ClusterRecord c1 = c0;
  c1.cluster_id = "t";
  c1.arm = 1;
  c1.outcomes = {1, 1, 0, 1, 0, 1};
  c1.covariates << -0.2, 0.5, -1.0, 0.7, 0.1, 1.4;
  ds.clusters = {c0, c1};
  return ds;
}

// Integrated likelihood computed directly from the dataset definition,
// independent of the adaptive quadrature code path.
double brute_force_loglik(const TrialDataset& ds, const Eigen::VectorXd& theta) {
  const double sigma = std::exp(theta(3));
  double total = 0.0;
  for (const auto& cluster : ds.clusters) {
    auto integrand = [&](double b) {
      double lik = std::exp(-0.5 * b * b / (sigma * sigma)) /
                   (sigma * std::sqrt(2.0 * M_PI));
      for (int l = 0; l < cluster.size(); ++l) {
        const double lp =
            theta(0) + theta(1) * cluster.arm + theta(2) * cluster.covariates(l, 0) + b;
        const double p = stats::expit(lp);
        lik *= cluster.outcomes[l] == 1 ? p : 1.0 - p;
      }
      return lik;
    };
    total += std::log(integrate(integrand, -10.0 * sigma, 10.0 * sigma));
  }
  return total;
}

}  // namespace

TEST_CASE("adaptive quadrature matches brute-force integration") {
  const TrialDataset ds = toy_two_clusters();
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  Eigen::VectorXd theta(4);
  for (auto [b0, b1, b2, ls] : {std::tuple{0.2, 0.5, 0.3, std::log(0.6)},
                                std::tuple{-0.5, 1.2, -0.4, std::log(0.25)},
                                std::tuple{0.0, 0.0, 0.0, std::log(1.5)}}) {
    theta << b0, b1, b2, ls;
    const double agq = relr_loglik(ds, spec, theta, 15);
    const double brute = brute_force_loglik(ds, theta);
    CHECK(agq == doctest::Approx(brute).epsilon(1e-6));
  }
}

TEST_CASE("analytic score matches finite differences of the loglik") {
  const TrialDataset ds = testing::random_dataset(303, 4, 12, false);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  Eigen::VectorXd theta(4);
  theta << 0.1, 0.6, 0.4, std::log(0.5);
  const Eigen::VectorXd score = relr_score(ds, spec, theta, 25);
  for (int c = 0; c < 4; ++c) {
    Eigen::VectorXd tp = theta, tm = theta;
    const double h = 1e-5;
    tp(c) += h;
    tm(c) -= h;
    const double fd =
        (relr_loglik(ds, spec, tp, 25) - relr_loglik(ds, spec, tm, 25)) / (2.0 * h);
    CHECK(fd == doctest::Approx(score(c)).epsilon(1e-4));
  }
}

TEST_CASE("variance pinned at zero reproduces the ordinary logistic fit") {
  const TrialDataset ds = testing::random_dataset(304, 5, 20, false);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  RelrOptions options;
  options.fixed_sigma_b2 = 0.0;
  const RelrFit fit = fit_relr(ds, spec, options);
  CHECK(fit.boundary_variance);

  ModelMatrix mm = build_model_matrix(ds, spec);
  const GlmFit glm = fit_glm(mm.design, mm.response, Link::Logit);
  REQUIRE(fit.fixed_effects.size() == glm.coefficients.size());
  for (int c = 0; c < glm.coefficients.size(); ++c) {
    CHECK(fit.fixed_effects(c) == doctest::Approx(glm.coefficients(c)).epsilon(1e-6));
  }
}

TEST_CASE("estimates are stable between 15 and 25 quadrature nodes") {
  ScenarioConfig config = builtin_scenario("S1");
  config.k = 10;
  config.m = 50;
  const TrialDataset ds = generate_trial_pair(config, SeedSpec{9090, 0}).full;
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  RelrOptions o15, o25;
  o15.quad_points = 15;
  o25.quad_points = 25;
  const RelrFit f15 = fit_relr(ds, spec, o15);
  const RelrFit f25 = fit_relr(ds, spec, o25);
  CHECK(std::fabs(f15.fixed_effects(1) - f25.fixed_effects(1)) < 1e-4);
}

TEST_CASE("shifting the covariate moves only the intercept") {
  const TrialDataset ds = testing::random_dataset(305, 5, 25, false);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  const RelrFit base = fit_relr(ds, spec);
  TrialDataset shifted = ds;
  for (auto& cluster : shifted.clusters) cluster.covariates.array() += 4.0;
  const RelrFit moved = fit_relr(shifted, spec);
  CHECK(moved.fixed_effects(1) == doctest::Approx(base.fixed_effects(1)).epsilon(1e-6));
  CHECK(moved.fixed_effects(2) == doctest::Approx(base.fixed_effects(2)).epsilon(1e-6));
  CHECK(moved.sigma_b2_hat == doctest::Approx(base.sigma_b2_hat).epsilon(1e-5));
}

TEST_CASE("interval arithmetic: df = 2k-2 and degenerate SE") {
  RelrFit fit;
  fit.fixed_effects = (Eigen::VectorXd(2) << 0.0, 1.2).finished();
  fit.covariance = Eigen::MatrixXd::Zero(2, 2);
  fit.covariance(1, 1) = 0.16;  // SE 0.4
  fit.treatment_column = 1;
  fit.converged = true;
  const EffectEstimate e = relr_interval(fit, 5, 0.95);
  CHECK(e.df == doctest::Approx(8.0));
  const double t = stats::student_t_quantile(8, 0.975);
  CHECK(t == doctest::Approx(2.306).epsilon(1e-3));
  CHECK(e.ci_upper - e.estimate == doctest::Approx(t * 0.4).epsilon(1e-10));

  fit.covariance(1, 1) = 0.0;
  const EffectEstimate point = relr_interval(fit, 5, 0.95);
  CHECK(point.ci_lower == doctest::Approx(point.estimate));
  CHECK(point.ci_upper == doctest::Approx(point.estimate));
}

TEST_CASE("centring happens once, globally, before complete records") {
  TrialDataset ds = testing::random_dataset(306, 6, 30, true);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  spec.include_interaction = true;
  spec.center_covariates = true;

  const Eigen::VectorXd global_means = covariate_grand_means(ds, spec);
  const TrialDataset cr = complete_records(ds);

  RelrOptions with_global;
  with_global.covariate_means = &global_means;
  const RelrFit fit_global = fit_relr(cr, spec, with_global);

  // Manually centring every covariate by the global mean and then centring at
  // zero is the same model.
  TrialDataset pre_centred = cr;
  for (auto& cluster : pre_centred.clusters) {
    cluster.covariates.col(0).array() -= global_means(0);
  }
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  RelrOptions with_zero;
  with_zero.covariate_means = &zero;
  const RelrFit fit_manual = fit_relr(pre_centred, spec, with_zero);
  CHECK(fit_global.fixed_effects(1) ==
        doctest::Approx(fit_manual.fixed_effects(1)).epsilon(1e-10));

  // Centring at the complete-records subset mean is a different (wrong) model:
  // the reported intervention effect moves.
  const RelrFit fit_subset = fit_relr(cr, spec);  // centres within the subset
  CHECK(std::fabs(fit_subset.fixed_effects(1) - fit_global.fixed_effects(1)) > 1e-4);
}

#include <doctest.h>

#include <cmath>

#include "crtmiss/cluster_level.hpp"
#include "crtmiss/datagen.hpp"
#include "crtmiss/errors.hpp"
#include "crtmiss/mmi.hpp"
#include "crtmiss/rng.hpp"
#include "crtmiss/stats.hpp"
#include "test_helpers.hpp"

using namespace crtmiss;

TEST_CASE("pooling: hand-computed worked example") {
  // N = 3, estimates {1,2,3}, variances {1,1,1}, nu_com = 8.
  std::vector<std::pair<double, double>> in = {{1.0, 1.0}, {2.0, 1.0}, {3.0, 1.0}};
  const PooledEstimate p = pool(in, 8.0, 0.95);
  CHECK(p.estimate == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(p.within_var == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.between_var == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.total_var == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
  CHECK(p.nu == doctest::Approx(6.125).epsilon(1e-12));
  CHECK(p.nu_obs_hat == doctest::Approx(216.0 / 77.0).epsilon(1e-12));  // 2.805194...
  CHECK(p.nu_adj == doctest::Approx(10584.0 / 5501.0).epsilon(1e-9));   // 1.924013...
  CHECK(p.nu_adj == doctest::Approx(1.9240).epsilon(1e-4));
  const double t = stats::student_t_quantile(p.nu_adj, 0.975);
  CHECK(p.ci_upper == doctest::Approx(2.0 + t * std::sqrt(7.0 / 3.0)).epsilon(1e-10));
}

TEST_CASE("pooling: identical estimates give B = 0 and nu_adj = nu_obs") {
  std::vector<std::pair<double, double>> in = {{1.5, 0.3}, {1.5, 0.3}, {1.5, 0.3}};
  const PooledEstimate p = pool(in, 10.0, 0.95);
  CHECK(p.estimate == doctest::Approx(1.5));
  CHECK(p.between_var == 0.0);
  CHECK(std::isinf(p.nu));
  // nu_obs with B = 0: ((nu_com+1)/(nu_com+3)) * nu_com
  CHECK(p.nu_obs_hat == doctest::Approx(11.0 / 13.0 * 10.0).epsilon(1e-12));
  CHECK(p.nu_adj == doctest::Approx(p.nu_obs_hat).epsilon(1e-12));
}

TEST_CASE("pooling: B dominating W drives nu to N-1 from above") {
  std::vector<std::pair<double, double>> in = {{0.0, 1e-9}, {10.0, 1e-9}, {-10.0, 1e-9}};
  const PooledEstimate p = pool(in, 8.0, 0.95);
  CHECK(p.nu > 2.0);
  CHECK(p.nu == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("pooling invariants on random inputs") {
  rng::Stream stream(42, 0, rng::Role::Scratch);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 2 + static_cast<int>(stream.uniform() * 20);
    std::vector<std::pair<double, double>> in;
    for (int i = 0; i < n; ++i) {
      in.emplace_back(stream.normal(0.0, 2.0), 0.01 + stream.uniform());
    }
    const double nu_com = 2.0 + stream.uniform() * 100.0;
    const PooledEstimate p = pool(in, nu_com, 0.95);
    CHECK(p.nu_adj <= nu_com + 1e-12);
    CHECK(p.nu_adj <= p.nu + 1e-12);
    CHECK(p.nu_adj > 0.0);
    CHECK(p.total_var >= p.within_var - 1e-15);
    double mean = 0.0;
    for (const auto& [e, v] : in) mean += e;
    mean /= n;
    CHECK(p.estimate == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("imputing a dataset with nothing missing returns identical copies") {
  const TrialDataset ds = testing::random_dataset(500, 4, 15, false);
  ImputationConfig config;
  config.n_imputations = 3;
  config.seed = SeedSpec{11, 0};
  const ImputationSet set = impute(ds, config);
  REQUIRE(set.completed.size() == 3);
  for (const auto& copy : set.completed) {
    for (std::size_t j = 0; j < ds.clusters.size(); ++j) {
      CHECK(copy.clusters[j].outcomes == ds.clusters[j].outcomes);
    }
  }
}

TEST_CASE("zero-missing mmi_analyze equals the full-data method with B = 0") {
  const TrialDataset ds = testing::random_dataset(501, 4, 20, false);
  ImputationConfig config;
  config.n_imputations = 5;
  config.seed = SeedSpec{12, 0};
  AnalysisSpec spec;
  const EffectEstimate pooled = mmi_analyze(ds, config, Method::ClU_Rd, spec);
  const auto direct = estimate_rd_unadjusted(summarize_clusters(ds, Records::Full));
  CHECK(pooled.estimate == doctest::Approx(direct.estimate).epsilon(1e-12));
  CHECK(pooled.se == doctest::Approx(direct.se).epsilon(1e-12));
}

TEST_CASE("chains are deterministic in dataset, config, and seed") {
  const TrialDataset ds = testing::random_dataset(502, 4, 20, true);
  ImputationConfig config;
  config.n_imputations = 4;
  config.burn_in = 30;
  config.thinning = 5;
  config.seed = SeedSpec{13, 7};
  const ImputationSet a = impute(ds, config);
  const ImputationSet b = impute(ds, config);
  for (std::size_t i = 0; i < a.completed.size(); ++i) {
    for (std::size_t j = 0; j < ds.clusters.size(); ++j) {
      CHECK(a.completed[i].clusters[j].outcomes == b.completed[i].clusters[j].outcomes);
    }
  }
  ImputationConfig other = config;
  other.seed = SeedSpec{13, 8};
  const ImputationSet c = impute(ds, other);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.completed.size(); ++i) {
    for (std::size_t j = 0; j < ds.clusters.size(); ++j) {
      any_diff |= (a.completed[i].clusters[j].outcomes != c.completed[i].clusters[j].outcomes);
    }
  }
  CHECK(any_diff);
}

TEST_CASE("stationarity smoke test: imputed rate matches the observed rate") {
  // Fully observed outcomes, masked at random, then imputed: the imputed
  // success rate must match the observed one within Monte Carlo error.
  const TrialDataset full = testing::random_dataset(503, 10, 40, false);
  TrialDataset masked = full;
  rng::Stream stream(77, 0, rng::Role::Scratch);
  int n_masked = 0;
  for (auto& cluster : masked.clusters) {
    for (auto& y : cluster.outcomes) {
      if (stream.bernoulli(0.35)) {
        y = kMissingOutcome;
        ++n_masked;
      }
    }
  }
  REQUIRE(n_masked > 100);

  double observed_rate = 0.0;
  int n_observed = 0;
  for (const auto& cluster : masked.clusters) {
    for (auto y : cluster.outcomes) {
      if (y != kMissingOutcome) {
        observed_rate += (y == 1);
        ++n_observed;
      }
    }
  }
  observed_rate /= n_observed;

  ImputationConfig config;
  config.n_imputations = 10;
  config.burn_in = 100;
  config.thinning = 10;
  config.adjust_for = {};  // masking is unrelated to x here
  config.seed = SeedSpec{14, 0};
  const ImputationSet set = impute(masked, config);

  double imputed_rate = 0.0;
  int n_imputed = 0;
  for (std::size_t i = 0; i < set.completed.size(); ++i) {
    for (std::size_t j = 0; j < masked.clusters.size(); ++j) {
      for (int l = 0; l < masked.clusters[j].size(); ++l) {
        if (masked.clusters[j].outcomes[l] == kMissingOutcome) {
          imputed_rate += (set.completed[i].clusters[j].outcomes[l] == 1);
          ++n_imputed;
        }
      }
    }
  }
  imputed_rate /= n_imputed;
  // 3 MC standard errors of a proportion on the masked draws (between-copy
  // correlation makes this conservative only up to a small factor)
  const double se = std::sqrt(observed_rate * (1.0 - observed_rate) / n_masked);
  CHECK(std::fabs(imputed_rate - observed_rate) < 3.0 * se + 0.02);
}

TEST_CASE("sampler recovers the parameters of a known probit model") {
  // Outcomes generated from the imputation model itself: probit link,
  // cluster intercepts tau2 = 0.09, coefficients below. Treat a random 30%
  // as missing; long-run posterior means must sit near the truth.
  const double true_beta[3] = {-0.4, 0.8, 0.6};
  rng::Stream gen(600, 0, rng::Role::Scratch);
  TrialDataset ds;
  ds.covariate_names = {"x"};
  const int k = 15, m = 40;
  for (int j = 0; j < 2 * k; ++j) {
    ClusterRecord c;
    c.arm = j < k ? 0 : 1;
    c.cluster_id = "pr" + std::to_string(j);
    const double bj = gen.normal(0.0, 0.3);
    c.outcomes.resize(m);
    c.covariates.resize(m, 1);
    for (int l = 0; l < m; ++l) {
      const double x = gen.normal(0.0, 1.0);
      c.covariates(l, 0) = x;
      const double lp = true_beta[0] + true_beta[1] * c.arm + true_beta[2] * x + bj;
      c.outcomes[l] = (gen.normal() < lp) ? 1 : 0;  // probit draw
      if (gen.bernoulli(0.3)) c.outcomes[l] = kMissingOutcome;
    }
    ds.clusters.push_back(c);
  }

  // Average the imputation-model coefficient draws over many thinned copies
  // by regressing imputed z-signs back: instead, recover by pooling the
  // completed-data probit-scale success rates through a logistic refit.
  ImputationConfig config;
  config.n_imputations = 60;
  config.burn_in = 200;
  config.thinning = 10;
  config.seed = SeedSpec{15, 0};
  const ImputationSet set = impute(ds, config);

  // Completed-data check: imputed arm-1 rate close to the generative rate.
  double rate_truth0 = 0.0, rate_truth1 = 0.0;
  {
    // Generative marginal rates by quadrature: Phi(lp/sqrt(1+tau2+beta2^2))
    // is approximate; use simple Monte Carlo from the model instead.
    rng::Stream mc(601, 0, rng::Role::Scratch);
    const int n = 200000;
    int s0 = 0, s1 = 0;
    for (int i = 0; i < n; ++i) {
      const double x = mc.normal(0.0, 1.0);
      const double b = mc.normal(0.0, 0.3);
      s0 += (mc.normal() < true_beta[0] + true_beta[2] * x + b);
      s1 += (mc.normal() < true_beta[0] + true_beta[1] + true_beta[2] * x + b);
    }
    rate_truth0 = static_cast<double>(s0) / n;
    rate_truth1 = static_cast<double>(s1) / n;
  }
  double rate0 = 0.0, rate1 = 0.0;
  long n0 = 0, n1 = 0;
  for (const auto& copy : set.completed) {
    for (const auto& cluster : copy.clusters) {
      for (auto y : cluster.outcomes) {
        if (cluster.arm == 0) {
          rate0 += (y == 1);
          ++n0;
        } else {
          rate1 += (y == 1);
          ++n1;
        }
      }
    }
  }
  rate0 /= n0;
  rate1 /= n1;
  CHECK(rate0 == doctest::Approx(rate_truth0).epsilon(0.06));
  CHECK(rate1 == doctest::Approx(rate_truth1).epsilon(0.06));
}

TEST_CASE("mmi rejects invalid configurations") {
  ImputationConfig config;
  config.thinning = 0;
  CHECK_THROWS_AS(config.check(), CrtError);
  config.thinning = 1;
  config.n_imputations = 1;
  CHECK_THROWS_AS(config.check(), CrtError);
}

TEST_CASE("interaction omitted from the imputation model biases S4 pooling") {
  // Congeniality regression: with arm-specific covariate effects in truth and
  // CDM missingness, imputing without the interaction leaves a visible bias
  // in the pooled RD while the interaction-aware imputer stays near truth.
  ScenarioConfig config = builtin_scenario("S4");
  config.k = 30;
  config.m = 50;
  AnalysisSpec cl_spec;
  cl_spec.adjust_for = {"x"};
  const int reps = 30;
  double with_int = 0.0, without_int = 0.0;
  int used = 0;
  for (int r = 0; r < reps; ++r) {
    const TrialPair pair =
        generate_trial_pair(config, SeedSpec{800, static_cast<std::uint64_t>(r)});
    ImputationConfig icfg;
    icfg.n_imputations = 5;
    icfg.burn_in = 60;
    icfg.thinning = 10;
    icfg.seed = SeedSpec{801, static_cast<std::uint64_t>(r)};
    icfg.include_interaction = true;
    const EffectEstimate good = mmi_analyze(pair.observed, icfg, Method::ClU_Rd, cl_spec);
    icfg.include_interaction = false;
    const EffectEstimate bad = mmi_analyze(pair.observed, icfg, Method::ClU_Rd, cl_spec);
    with_int += good.estimate;
    without_int += bad.estimate;
    ++used;
  }
  with_int /= used;
  without_int /= used;
  // S4 truth is ~0.20; the non-congenial imputer visibly undershoots.
  CHECK(std::fabs(with_int - 0.20) < 0.02);
  CHECK(without_int < with_int - 0.01);
}

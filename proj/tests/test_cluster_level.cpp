#include <doctest.h>

#include <cmath>

#include "crtmiss/cluster_level.hpp"
#include "crtmiss/errors.hpp"
#include "crtmiss/stats.hpp"
#include "test_helpers.hpp"

using namespace crtmiss;

namespace {

// Clusters with exact success proportions {0.4, 0.6} vs {0.7, 0.9} on m = 10.
TrialDataset proportions_dataset() {
  TrialDataset ds;
  ds.covariate_names = {"x"};
  const double props[4] = {0.4, 0.6, 0.7, 0.9};
  for (int j = 0; j < 4; ++j) {
    ClusterRecord c;
    c.arm = j < 2 ? 0 : 1;
    c.cluster_id = (c.arm == 0 ? "c" : "t") + std::to_string(j % 2);
    const int m = 10;
    const int successes = static_cast<int>(std::lround(props[j] * m));
    c.outcomes.assign(m, 0);
    for (int l = 0; l < successes; ++l) c.outcomes[l] = 1;
    c.covariates = Eigen::MatrixXd::Zero(m, 1);
    for (int l = 0; l < m; ++l) c.covariates(l, 0) = 0.15 * l - 0.6;
    ds.clusters.push_back(c);
  }
  return ds;
}

}  // namespace

TEST_CASE("cluster summaries: proportions over observed individuals") {
  TrialDataset ds = proportions_dataset();
  SUBCASE("full data") {
    const auto summaries = summarize_clusters(ds, Records::Full);
    REQUIRE(summaries.size() == 4);
    CHECK(summaries[0].proportion == doctest::Approx(0.4));
    CHECK(summaries[0].observed == 10);
  }
  SUBCASE("a cluster of {1,1,0,missing} has p = 2/3 over 3 observed") {
    ds.clusters[0].outcomes = {1, 1, 0, kMissingOutcome};
    ds.clusters[0].covariates = Eigen::MatrixXd::Zero(4, 1);
    const auto summaries = summarize_clusters(ds, Records::Complete);
    CHECK(summaries[0].observed == 3);
    CHECK(summaries[0].successes == 2);
    CHECK(summaries[0].proportion == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("an all-missing cluster is dropped") {
    ds.clusters[1].outcomes.assign(10, kMissingOutcome);
    const auto summaries = summarize_clusters(ds, Records::Complete);
    CHECK(summaries.size() == 3);
    for (const auto& s : summaries) CHECK(s.cluster_id != ds.clusters[1].cluster_id);
  }
  SUBCASE("full records on incomplete data is an error") {
    ds.clusters[0].outcomes[0] = kMissingOutcome;
    CHECK_THROWS_AS((void)summarize_clusters(ds, Records::Full), CrtError);
  }
  SUBCASE("dropping a whole arm raises EmptyArmAfterDrop") {
    ds.clusters[2].outcomes.assign(10, kMissingOutcome);
    ds.clusters[3].outcomes.assign(10, kMissingOutcome);
    try {
      (void)summarize_clusters(ds, Records::Complete);
      FAIL("expected EmptyArmAfterDrop");
    } catch (const CrtError& e) {
      CHECK(e.code() == ErrorCode::EmptyArmAfterDrop);
    }
  }
}

TEST_CASE("unadjusted RD matches the hand-computed pooled t") {
  const auto summaries = summarize_clusters(proportions_dataset(), Records::Full);
  const EffectEstimate e = estimate_rd_unadjusted(summaries);
  CHECK(e.estimate == doctest::Approx(0.30).epsilon(1e-12));
  // pooled variance 0.02, SE = sqrt(0.02 * (1/2 + 1/2)) = 0.141421
  CHECK(e.se == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
  CHECK(e.df == doctest::Approx(2.0));
  const double t = stats::student_t_quantile(2, 0.975);
  CHECK(e.ci_upper == doctest::Approx(0.30 + t * e.se).epsilon(1e-12));
}

TEST_CASE("unadjusted RD is zero for identical arms") {
  TrialDataset ds = proportions_dataset();
  ds.clusters[2].outcomes = ds.clusters[0].outcomes;
  ds.clusters[3].outcomes = ds.clusters[1].outcomes;
  const auto summaries = summarize_clusters(ds, Records::Full);
  CHECK(estimate_rd_unadjusted(summaries).estimate == doctest::Approx(0.0));
  CHECK(estimate_rr_unadjusted(summaries).estimate == doctest::Approx(0.0));
}

TEST_CASE("unadjusted log RR: hand evaluation of the variance formula") {
  const auto summaries = summarize_clusters(proportions_dataset(), Records::Full);
  const EffectEstimate e = estimate_rr_unadjusted(summaries);
  CHECK(e.estimate == doctest::Approx(std::log(0.8 / 0.5)).epsilon(1e-12));
  // s0^2 = s1^2 = 0.02; V = 0.02/(2*0.25) + 0.02/(2*0.64) = 0.055625
  CHECK(e.se == doctest::Approx(std::sqrt(0.02 / (2 * 0.25) + 0.02 / (2 * 0.64)))
                    .epsilon(1e-12));
  CHECK(e.se == doctest::Approx(0.2358495283014151).epsilon(1e-10));
  CHECK(e.df == doctest::Approx(2.0));
}

TEST_CASE("zero mean proportion raises") {
  TrialDataset ds = proportions_dataset();
  ds.clusters[0].outcomes.assign(10, 0);
  ds.clusters[1].outcomes.assign(10, 0);
  const auto summaries = summarize_clusters(ds, Records::Full);
  try {
    (void)estimate_rr_unadjusted(summaries);
    FAIL("expected ZeroMeanProportion");
  } catch (const CrtError& e) {
    CHECK(e.code() == ErrorCode::ZeroMeanProportion);
  }
}

TEST_CASE("too few clusters raises") {
  TrialDataset ds = proportions_dataset();
  ds.clusters.erase(ds.clusters.begin());  // one cluster left in arm 0
  const auto summaries = summarize_clusters(ds, Records::Full);
  CHECK_THROWS_AS((void)estimate_rd_unadjusted(summaries), CrtError);
}

TEST_CASE("a constant covariate collapses adjusted onto unadjusted") {
  TrialDataset ds = testing::random_dataset(55, 5, 30, false);
  for (auto& cluster : ds.clusters) cluster.covariates.setConstant(3.7);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  const auto summaries = summarize_clusters(ds, Records::Full);

  const auto rd_adj = estimate_rd_adjusted(ds, spec, Records::Full);
  const auto rd_unadj = estimate_rd_unadjusted(summaries);
  CHECK(rd_adj.estimate == doctest::Approx(rd_unadj.estimate).epsilon(1e-10));

  const auto rr_adj = estimate_rr_adjusted(ds, spec, Records::Full);
  const auto rr_unadj = estimate_rr_unadjusted(summaries);
  CHECK(rr_adj.estimate == doctest::Approx(rr_unadj.estimate).epsilon(1e-10));
}

TEST_CASE("algebraic identity: adjusted RD on full balanced data") {
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  for (int rep = 0; rep < 100; ++rep) {
    const TrialDataset ds = testing::random_dataset(1000 + rep, 4, 20, false);
    const int k = 4, m = 20;
    const auto adj = summarize_clusters_adjusted(ds, spec, Records::Full);
    const auto rd_adj = estimate_rd_adjusted(ds, spec, Records::Full);
    const auto rd_unadj = estimate_rd_unadjusted(summarize_clusters(ds, Records::Full));
    double sum_pred0 = 0.0, sum_pred1 = 0.0;
    for (const auto& s : adj) (s.arm == 0 ? sum_pred0 : sum_pred1) += s.predicted;
    const double rhs = rd_unadj.estimate + (sum_pred0 - sum_pred1) / (m * k);
    CHECK(rd_adj.estimate == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("algebraic identity: adjusted RD on complete records") {
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  int used = 0;
  for (int rep = 0; rep < 150 && used < 100; ++rep) {
    const TrialDataset ds = testing::random_dataset(5000 + rep, 4, 25, true);
    const auto plain = summarize_clusters(ds, Records::Complete);
    if (plain.size() != ds.clusters.size()) continue;  // identity stated for no drops
    ++used;
    const int k = 4;
    const auto adj = summarize_clusters_adjusted(ds, spec, Records::Complete);
    const auto rd_adj = estimate_rd_adjusted(ds, spec, Records::Complete);
    const auto rd_unadj = estimate_rd_unadjusted(plain);
    double correction = 0.0;
    for (const auto& s : adj) {
      correction += (s.arm == 0 ? 1.0 : -1.0) * s.predicted / s.observed;
    }
    const double rhs = rd_unadj.estimate + correction / k;
    CHECK(rd_adj.estimate == doctest::Approx(rhs).epsilon(1e-10));
  }
  CHECK(used == 100);
}

TEST_CASE("adjusted estimators drop emptied clusters and use retained counts") {
  TrialDataset ds = testing::random_dataset(77, 3, 15, false);
  ds.clusters[0].outcomes.assign(15, kMissingOutcome);
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  const auto est = estimate_rd_adjusted(ds, spec, Records::Complete);
  // retained clusters: 5 -> df = 3
  CHECK(est.df == doctest::Approx(3.0));
}

#include <doctest.h>

#include <cmath>

#include "crtmiss/errors.hpp"
#include "crtmiss/glm.hpp"
#include "crtmiss/rng.hpp"
#include "crtmiss/stats.hpp"

using namespace crtmiss;

namespace {

// 8 observations, mean 0.25
Eigen::VectorXd quarter_response() {
  Eigen::VectorXd y(8);
  y << 1, 0, 0, 0, 1, 0, 0, 0;
  return y;
}

}  // namespace

TEST_CASE("intercept-only logistic fit is the logit of the mean") {
  const Eigen::VectorXd y = quarter_response();
  const Eigen::MatrixXd design = Eigen::MatrixXd::Ones(8, 1);
  const GlmFit fit = fit_glm(design, y, Link::Logit);
  CHECK(fit.converged);
  CHECK(fit.coefficients(0) == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-9));
  CHECK(fit.coefficients(0) == doctest::Approx(-1.0986122886681098).epsilon(1e-8));
}

TEST_CASE("binary covariate slope equals the logit difference of group means") {
  // x = 0 group mean 0.2 (1 of 5), x = 1 group mean 0.6 (3 of 5)
  Eigen::MatrixXd design(10, 2);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = i < 5 ? 0.0 : 1.0;
  }
  y << 1, 0, 0, 0, 0, 1, 1, 1, 0, 0;
  const GlmFit fit = fit_glm(design, y, Link::Logit);
  CHECK(fit.coefficients(1) ==
        doctest::Approx(stats::logit(0.6) - stats::logit(0.2)).epsilon(1e-8));
  CHECK(fit.coefficients(1) == doctest::Approx(1.791759469228055).epsilon(1e-7));

  const GlmPrediction pred = predict(fit, design);
  CHECK(pred.values(9) == doctest::Approx(0.6).epsilon(1e-8));
  CHECK_FALSE(pred.any_above_one);
}

TEST_CASE("perfect separation raises an error") {
  Eigen::MatrixXd design(8, 2);
  Eigen::VectorXd y(8);
  for (int i = 0; i < 8; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = i;
    y(i) = i < 4 ? 0.0 : 1.0;
  }
  try {
    (void)fit_glm(design, y, Link::Logit);
    FAIL("expected Separation");
  } catch (const CrtError& e) {
    CHECK(e.code() == ErrorCode::Separation);
  }
}

TEST_CASE("rank-deficient design is rejected") {
  Eigen::MatrixXd design(6, 2);
  design.col(0).setOnes();
  design.col(1).setConstant(2.0);  // collinear with the intercept
  Eigen::VectorXd y(6);
  y << 1, 0, 1, 0, 1, 0;
  try {
    (void)fit_glm(design, y, Link::Logit);
    FAIL("expected RankDeficient");
  } catch (const CrtError& e) {
    CHECK(e.code() == ErrorCode::RankDeficient);
  }
}

TEST_CASE("score identity holds at the logit optimum") {
  rng::Stream stream(77, 0, rng::Role::Scratch);
  Eigen::MatrixXd design(200, 3);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = stream.normal();
    design(i, 2) = stream.normal();
    const double p = stats::expit(-0.3 + 0.8 * design(i, 1) - 0.5 * design(i, 2));
    y(i) = stream.bernoulli(p) ? 1.0 : 0.0;
  }
  const GlmFit fit = fit_glm(design, y, Link::Logit);
  const GlmPrediction fitted = predict(fit, design);
  const Eigen::VectorXd score = design.transpose() * (y - fitted.values);
  CHECK(score.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("analytic score matches central finite differences") {
  rng::Stream stream(78, 0, rng::Role::Scratch);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::MatrixXd design(60, 2);
    Eigen::VectorXd y(60);
    for (int i = 0; i < 60; ++i) {
      design(i, 0) = 1.0;
      design(i, 1) = stream.normal();
      y(i) = stream.bernoulli(stats::expit(0.4 * design(i, 1))) ? 1.0 : 0.0;
    }
    Eigen::VectorXd beta(2);
    beta << 0.2 * stream.normal(), 0.2 * stream.normal();
    // analytic score of the logit log-likelihood: X'(y - mu)
    Eigen::VectorXd mu(60);
    for (int i = 0; i < 60; ++i) mu(i) = stats::expit(design.row(i) * beta);
    const Eigen::VectorXd analytic = design.transpose() * (y - mu);
    const double h = 1e-5;
    for (int c = 0; c < 2; ++c) {
      Eigen::VectorXd bp = beta, bm = beta;
      bp(c) += h;
      bm(c) -= h;
      const double fd =
          (glm_loglik(design, y, bp, Link::Logit) - glm_loglik(design, y, bm, Link::Logit)) /
          (2.0 * h);
      CHECK(fd == doctest::Approx(analytic(c)).epsilon(1e-4));
    }
  }
}

TEST_CASE("adding a constant to a covariate moves only the intercept") {
  rng::Stream stream(79, 0, rng::Role::Scratch);
  Eigen::MatrixXd design(150, 2);
  Eigen::VectorXd y(150);
  for (int i = 0; i < 150; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = stream.normal();
    y(i) = stream.bernoulli(stats::expit(0.2 + 0.9 * design(i, 1))) ? 1.0 : 0.0;
  }
  const GlmFit base = fit_glm(design, y, Link::Logit);
  Eigen::MatrixXd shifted = design;
  shifted.col(1).array() += 5.0;
  const GlmFit moved = fit_glm(shifted, y, Link::Logit);
  CHECK(moved.coefficients(1) == doctest::Approx(base.coefficients(1)).epsilon(1e-8));
  CHECK(moved.coefficients(0) ==
        doctest::Approx(base.coefficients(0) - 5.0 * base.coefficients(1)).epsilon(1e-7));
}

TEST_CASE("log link: intercept-only fit and flagged predictions") {
  const Eigen::VectorXd y = quarter_response();
  const Eigen::MatrixXd design = Eigen::MatrixXd::Ones(8, 1);
  const GlmFit fit = fit_glm(design, y, Link::Log);
  CHECK(fit.converged);
  CHECK(fit.coefficients(0) == doctest::Approx(std::log(0.25)).epsilon(1e-7));

  GlmFit zero = fit;
  zero.coefficients(0) = 0.0;
  const GlmPrediction pred = predict(zero, design);
  CHECK(pred.values(0) == doctest::Approx(1.0));
  CHECK_FALSE(pred.any_above_one);
  zero.coefficients(0) = 0.2;
  CHECK(predict(zero, design).any_above_one);
}

TEST_CASE("log link recovers known risk ratios") {
  rng::Stream stream(80, 0, rng::Role::Scratch);
  const int n = 40000;
  Eigen::MatrixXd design(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = i % 2;
    const double mu = std::exp(-1.6 + 0.5 * design(i, 1));
    y(i) = stream.bernoulli(mu) ? 1.0 : 0.0;
  }
  const GlmFit fit = fit_glm(design, y, Link::Log);
  CHECK(fit.coefficients(0) == doctest::Approx(-1.6).epsilon(0.05));
  CHECK(fit.coefficients(1) == doctest::Approx(0.5).epsilon(0.05));
}

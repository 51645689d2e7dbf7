#include "crtmiss/gee.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "crtmiss/errors.hpp"
#include "crtmiss/glm.hpp"
#include "crtmiss/model_matrix.hpp"
#include "crtmiss/stats.hpp"

namespace crtmiss {

namespace {

constexpr double kTol = 1e-8;
constexpr int kMaxIter = 100;

struct ClusterQuantities {
  Eigen::MatrixXd b;   // A^{-1/2} D, rows scaled by dmu/sqrt(v)
  Eigen::VectorXd t;   // standardized residuals (y - mu)/sqrt(v)
};

void row_quantities(const Eigen::VectorXd& eta, Link link, Eigen::VectorXd& mu,
                    Eigen::VectorXd& sqrt_v, Eigen::VectorXd& dmu) {
  const Eigen::Index n = eta.size();
  mu.resize(n);
  sqrt_v.resize(n);
  dmu.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double m;
    if (link == Link::Logit) {
      m = stats::expit(eta(i));
      dmu(i) = m * (1.0 - m);
    } else {
      m = std::exp(eta(i));
      dmu(i) = m;
    }
    m = std::min(std::max(m, 1e-10), 1.0 - 1e-10);
    mu(i) = m;
    sqrt_v(i) = std::sqrt(m * (1.0 - m));
  }
}

/// Applies the inverse exchangeable correlation R(alpha)^{-1} to the columns
/// of [t | B] in closed form.
struct ExchangeableInverse {
  double alpha;
  Eigen::VectorXd apply_vec(const Eigen::VectorXd& u) const {
    const double m = static_cast<double>(u.size());
    const double c = alpha / (1.0 + (m - 1.0) * alpha);
    return (u.array() - c * u.sum()).matrix() / (1.0 - alpha);
  }
  Eigen::MatrixXd apply_mat(const Eigen::MatrixXd& u) const {
    const double m = static_cast<double>(u.rows());
    const double c = alpha / (1.0 + (m - 1.0) * alpha);
    const Eigen::RowVectorXd colsum = u.colwise().sum();
    return (u.rowwise() - c * colsum) / (1.0 - alpha);
  }
};

struct GeeCore {
  Eigen::VectorXd beta;
  double alpha = 0.0;
  Eigen::MatrixXd bread_inv;
  Eigen::MatrixXd sandwich;
  bool converged = false;
  int iterations = 0;
};

GeeCore solve_gee(const ModelMatrix& mm, Link link, bool exchangeable,
                  const Eigen::VectorXd& beta_init) {
  const Eigen::Index p = mm.design.cols();
  Eigen::VectorXd beta = beta_init;
  Eigen::VectorXd mu, sqrt_v, dmu;

  GeeCore core;
  double alpha = 0.0;
  for (int iter = 1; iter <= kMaxIter; ++iter) {
    core.iterations = iter;
    Eigen::VectorXd eta = mm.design * beta;
    if (link == Link::Log && (eta.array() >= 0.0).any()) {
      throw CrtError(ErrorCode::NoConvergence,
                     "log-link GEE produced fitted probability >= 1");
    }
    row_quantities(eta, link, mu, sqrt_v, dmu);

    // Moment estimator of alpha from standardized Pearson residuals.
    if (exchangeable) {
      double num = 0.0;
      double pairs = 0.0;
      long row = 0;
      for (std::size_t j = 0; j < mm.cluster_sizes.size(); ++j) {
        const int mj = mm.cluster_sizes[j];
        double s = 0.0, s2 = 0.0;
        for (int l = 0; l < mj; ++l) {
          const double e = (mm.response(row + l) - mu(row + l)) / sqrt_v(row + l);
          s += e;
          s2 += e * e;
        }
        num += 0.5 * (s * s - s2);
        pairs += 0.5 * mj * (mj - 1.0);
        row += mj;
      }
      const double den = pairs - static_cast<double>(p);
      alpha = den > 0.0 ? num / den : 0.0;
      alpha = std::min(std::max(alpha, 0.0), 0.99);
    }

    // Fisher scoring step.
    const ExchangeableInverse rinv{alpha};
    Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    long row = 0;
    for (std::size_t j = 0; j < mm.cluster_sizes.size(); ++j) {
      const int mj = mm.cluster_sizes[j];
      Eigen::MatrixXd b(mj, p);
      Eigen::VectorXd t(mj);
      for (int l = 0; l < mj; ++l) {
        const double w = dmu(row + l) / sqrt_v(row + l);
        b.row(l) = w * mm.design.row(row + l);
        t(l) = (mm.response(row + l) - mu(row + l)) / sqrt_v(row + l);
      }
      const Eigen::MatrixXd rb = rinv.apply_mat(b);
      bread.noalias() += b.transpose() * rb;
      score.noalias() += rb.transpose() * t;
      row += mj;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(bread);
    if (ldlt.info() != Eigen::Success) {
      throw CrtError(ErrorCode::RankDeficient, "GEE bread matrix not positive definite");
    }
    Eigen::VectorXd step = ldlt.solve(score);

    // Step-halving keeps log-link fitted values inside (0,1).
    Eigen::VectorXd beta_new;
    bool ok = false;
    for (int half = 0; half < 30; ++half) {
      beta_new = beta + step;
      if (link == Link::Log && ((mm.design * beta_new).array() >= 0.0).any()) {
        step *= 0.5;
        continue;
      }
      ok = true;
      break;
    }
    if (!ok) {
      throw CrtError(ErrorCode::NoConvergence,
                     "log-link GEE could not keep probabilities below 1");
    }

    const double rel = (beta_new - beta).norm() / std::max(1.0, beta_new.norm());
    beta = beta_new;
    if (rel < kTol) {
      core.converged = true;
      break;
    }
  }
  if (!core.converged) {
    throw CrtError(ErrorCode::NoConvergence,
                   "GEE did not converge in " + std::to_string(kMaxIter) + " iterations");
  }

  // Bread and meat at the solution.
  Eigen::VectorXd eta = mm.design * beta;
  row_quantities(eta, link, mu, sqrt_v, dmu);
  const ExchangeableInverse rinv{alpha};
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  long row = 0;
  for (std::size_t j = 0; j < mm.cluster_sizes.size(); ++j) {
    const int mj = mm.cluster_sizes[j];
    Eigen::MatrixXd b(mj, p);
    Eigen::VectorXd t(mj);
    for (int l = 0; l < mj; ++l) {
      const double w = dmu(row + l) / sqrt_v(row + l);
      b.row(l) = w * mm.design.row(row + l);
      t(l) = (mm.response(row + l) - mu(row + l)) / sqrt_v(row + l);
    }
    const Eigen::MatrixXd rb = rinv.apply_mat(b);
    bread.noalias() += b.transpose() * rb;
    const Eigen::VectorXd g = rb.transpose() * t;
    meat.noalias() += g * g.transpose();
    row += mj;
  }
  core.beta = beta;
  core.alpha = alpha;
  core.bread_inv = bread.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  core.sandwich = core.bread_inv * meat * core.bread_inv;
  return core;
}

}  // namespace

GeeFit fit_gee(const TrialDataset& dataset, const AnalysisSpec& spec,
               const Eigen::VectorXd* covariate_means) {
  const ModelMatrix mm = build_model_matrix(dataset, spec, covariate_means);
  const Eigen::Index p = mm.design.cols();

  Eigen::VectorXd beta0;
  try {
    beta0 = fit_glm(mm.design, mm.response, spec.link).coefficients;
  } catch (const CrtError& e) {
    if (e.code() == ErrorCode::RankDeficient || e.code() == ErrorCode::Separation) throw;
    beta0 = Eigen::VectorXd::Zero(p);
    if (spec.link == Link::Log) {
      const double ybar = std::min(std::max(mm.response.mean(), 1e-6), 1.0 - 1e-6);
      beta0(0) = std::log(ybar);
    }
  }

  GeeFit fit;
  fit.link = spec.link;
  fit.working = spec.working_correlation;
  fit.term_names = mm.term_names;
  fit.treatment_column = mm.treatment_column;
  fit.clusters_arm0 = mm.clusters_arm0;
  fit.clusters_arm1 = mm.clusters_arm1;
  fit.cluster_level_params = mm.cluster_level_params;

  const bool want_exchangeable = spec.working_correlation == WorkingCorrelation::Exchangeable;
  try {
    const GeeCore core = solve_gee(mm, spec.link, want_exchangeable, beta0);
    fit.coefficients = core.beta;
    fit.alpha_hat = core.alpha;
    fit.model_cov = core.bread_inv;
    fit.sandwich_cov = core.sandwich;
    fit.converged = true;
    fit.iterations = core.iterations;
    return fit;
  } catch (const CrtError& e) {
    if (!want_exchangeable || e.code() == ErrorCode::RankDeficient) throw;
  }

  // Exchangeable fit failed: refit with an independence working structure.
  const GeeCore core = solve_gee(mm, spec.link, /*exchangeable=*/false, beta0);
  fit.coefficients = core.beta;
  fit.alpha_hat = 0.0;
  fit.model_cov = core.bread_inv;
  fit.sandwich_cov = core.sandwich;
  fit.converged = true;
  fit.fell_back_to_independence = true;
  fit.iterations = core.iterations;
  return fit;
}

EffectEstimate corrected_interval(const GeeFit& fit, double k_per_arm,
                                  int d_cluster_level_params, double ci_level) {
  const double df = 2.0 * k_per_arm - 2.0 - d_cluster_level_params;
  if (df <= 0.0) {
    throw CrtError(ErrorCode::NonPositiveDf,
                   "GEE df 2k-2-d = " + std::to_string(df) + " is not positive");
  }
  const int t = fit.treatment_column;
  const double raw_se = std::sqrt(std::max(0.0, fit.sandwich_cov(t, t)));
  const double se = raw_se * std::sqrt(k_per_arm / (k_per_arm - 1.0));
  const EffectScale scale =
      fit.link == Link::Logit ? EffectScale::LogOddsMarginal : EffectScale::LogRiskRatio;
  return make_t_interval(scale, fit.coefficients(t), se, df, ci_level, fit.converged);
}

double gee_estimating_residual(const TrialDataset& dataset, const AnalysisSpec& spec,
                               const GeeFit& fit, const Eigen::VectorXd* covariate_means) {
  const ModelMatrix mm = build_model_matrix(dataset, spec, covariate_means);
  Eigen::VectorXd mu, sqrt_v, dmu;
  Eigen::VectorXd eta = mm.design * fit.coefficients;
  row_quantities(eta, fit.link, mu, sqrt_v, dmu);
  const ExchangeableInverse rinv{fit.alpha_hat};
  Eigen::VectorXd score = Eigen::VectorXd::Zero(mm.design.cols());
  long row = 0;
  for (std::size_t j = 0; j < mm.cluster_sizes.size(); ++j) {
    const int mj = mm.cluster_sizes[j];
    Eigen::MatrixXd b(mj, mm.design.cols());
    Eigen::VectorXd t(mj);
    for (int l = 0; l < mj; ++l) {
      const double w = dmu(row + l) / sqrt_v(row + l);
      b.row(l) = w * mm.design.row(row + l);
      t(l) = (mm.response(row + l) - mu(row + l)) / sqrt_v(row + l);
    }
    score.noalias() += rinv.apply_mat(b).transpose() * t;
    row += mj;
  }
  return score.lpNorm<Eigen::Infinity>();
}

}  // namespace crtmiss

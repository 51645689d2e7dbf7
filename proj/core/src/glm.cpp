#include "crtmiss/glm.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "crtmiss/errors.hpp"
#include "crtmiss/stats.hpp"

namespace crtmiss {

namespace {

constexpr double kTol = 1e-8;
constexpr int kMaxIter = 100;
constexpr double kSeparationNorm = 1e3;

double deviance_at(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, Link link) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (link == Link::Logit) {
      // -2 [ y*eta - log(1+e^eta) ]
      dev += -2.0 * (y(i) * eta(i) - stats::log1pexp(eta(i)));
    } else {
      const double mu = std::exp(eta(i));
      dev += -2.0 * (y(i) * eta(i) + (1.0 - y(i)) * std::log1p(-mu));
    }
  }
  return dev;
}

}  // namespace

double glm_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                  const Eigen::VectorXd& coefficients, Link link) {
  return -0.5 * deviance_at(design * coefficients, response, link);
}

GlmFit fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, Link link) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (response.size() != n) {
    throw CrtError(ErrorCode::RankDeficient, "design rows do not match response length");
  }
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) {
      throw CrtError(ErrorCode::RankDeficient,
                     "design matrix is rank deficient (rank " +
                         std::to_string(qr.rank()) + " < " + std::to_string(p) + ")");
    }
  }

  const double ybar = std::min(std::max(response.mean(), 1e-10), 1.0 - 1e-10);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  // Start at the intercept-only solution when column 0 looks like an intercept.
  if ((design.col(0).array() == 1.0).all()) {
    beta(0) = link == Link::Logit ? stats::logit(ybar) : std::log(ybar);
  } else if (link == Link::Log) {
    throw CrtError(ErrorCode::NoConvergence, "log link requires an intercept column");
  }

  Eigen::VectorXd eta = design * beta;
  double dev = deviance_at(eta, response, link);

  GlmFit fit;
  fit.link = link;

  for (int iter = 1; iter <= kMaxIter; ++iter) {
    // Fisher scoring: weights w = (dmu/deta)^2 / V(mu), working residual
    // u = (y - mu) * (dmu/deta) / V(mu).
    Eigen::VectorXd w(n), u(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (link == Link::Logit) {
        const double mu = stats::expit(eta(i));
        const double v = std::max(mu * (1.0 - mu), 1e-12);
        w(i) = v;
        u(i) = response(i) - mu;
      } else {
        const double mu = std::exp(std::min(eta(i), -1e-10));
        w(i) = mu / std::max(1.0 - mu, 1e-12);
        u(i) = (response(i) - mu) / std::max(1.0 - mu, 1e-12);
      }
    }
    const Eigen::MatrixXd info = design.transpose() * w.asDiagonal() * design;
    const Eigen::VectorXd score = design.transpose() * u;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) {
      throw CrtError(ErrorCode::RankDeficient, "Fisher information not positive definite");
    }
    Eigen::VectorXd step = ldlt.solve(score);

    // Step-halving keeps the deviance non-increasing (needed for the
    // non-canonical log link; harmless for logit).
    double new_dev = 0.0;
    Eigen::VectorXd new_beta, new_eta;
    bool accepted = false;
    for (int half = 0; half < 30; ++half) {
      new_beta = beta + step;
      new_eta = design * new_beta;
      if (link == Link::Log && (new_eta.array() >= 0.0).any()) {
        step *= 0.5;
        continue;
      }
      new_dev = deviance_at(new_eta, response, link);
      if (std::isfinite(new_dev) && new_dev <= dev + 1e-10) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      throw CrtError(ErrorCode::NoConvergence,
                     "step-halving failed to reduce the deviance at iteration " +
                         std::to_string(iter));
    }

    const double rel_change =
        (new_beta - beta).norm() / std::max(1.0, new_beta.norm());
    beta = new_beta;
    eta = new_eta;
    dev = new_dev;
    fit.iterations = iter;

    if (beta.lpNorm<Eigen::Infinity>() > kSeparationNorm) {
      throw CrtError(ErrorCode::Separation,
                     "coefficients diverging (sup-norm > 1e3); data are separated");
    }
    if (rel_change < kTol || score.lpNorm<Eigen::Infinity>() < kTol) {
      // A perfect fit of binary data (deviance ~ 0 with large coefficients)
      // means the likelihood has no finite maximum: probabilities are pinned
      // at 0/1 and the score saturates to zero long before the norm blows up.
      if (dev < 1e-7 && beta.lpNorm<Eigen::Infinity>() > 20.0) {
        throw CrtError(ErrorCode::Separation,
                       "fitted probabilities pinned at 0/1; data are separated");
      }
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    throw CrtError(ErrorCode::NoConvergence,
                   "no convergence after " + std::to_string(kMaxIter) + " iterations");
  }

  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (link == Link::Logit) {
      const double mu = stats::expit(eta(i));
      w(i) = std::max(mu * (1.0 - mu), 1e-12);
    } else {
      const double mu = std::exp(std::min(eta(i), -1e-10));
      w(i) = mu / std::max(1.0 - mu, 1e-12);
    }
  }
  const Eigen::MatrixXd info = design.transpose() * w.asDiagonal() * design;
  fit.coefficients = beta;
  fit.covariance = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.deviance = dev;
  return fit;
}

GlmPrediction predict(const GlmFit& fit, const Eigen::MatrixXd& design) {
  if (design.cols() != fit.coefficients.size()) {
    throw CrtError(ErrorCode::RankDeficient,
                   "prediction design has wrong number of columns");
  }
  GlmPrediction out;
  const Eigen::VectorXd eta = design * fit.coefficients;
  out.values.resize(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (fit.link == Link::Logit) {
      out.values(i) = stats::expit(eta(i));
    } else {
      out.values(i) = std::exp(eta(i));
      if (out.values(i) > 1.0) out.any_above_one = true;
    }
  }
  return out;
}

}  // namespace crtmiss

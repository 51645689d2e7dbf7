#include "crtmiss/relr.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "crtmiss/errors.hpp"
#include "crtmiss/glm.hpp"
#include "crtmiss/model_matrix.hpp"
#include "crtmiss/stats.hpp"

namespace crtmiss {

namespace {

constexpr double kLogSigmaFloor = -7.0;  // sigma_b2 < ~8e-7 counts as boundary

/// AGQ evaluator over the cluster random intercept. theta = (gamma, log sigma).
/// Cluster modes are cached between evaluations as Newton warm starts.
class Evaluator {
 public:
  Evaluator(const ModelMatrix& mm, int quad_points)
      : mm_(mm), rule_(stats::gauss_hermite(quad_points)),
        modes_(mm.cluster_sizes.size(), 0.0) {}

  int n_params() const { return static_cast<int>(mm_.design.cols()) + 1; }

  /// Returns -log L and, when grad != nullptr, fills the gradient of log L.
  double loglik(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
    const Eigen::Index p = mm_.design.cols();
    const double log_sigma = theta(p);
    const double sigma = std::exp(log_sigma);
    const double sigma2 = sigma * sigma;
    const Eigen::VectorXd eta0 = mm_.design * theta.head(p);

    if (grad != nullptr) grad->setZero(n_params());
    double total = 0.0;

    long row = 0;
    for (std::size_t j = 0; j < mm_.cluster_sizes.size(); ++j) {
      const int mj = mm_.cluster_sizes[j];
      const auto eta = eta0.segment(row, mj);
      const auto y = mm_.response.segment(row, mj);

      // Conditional mode of b for this cluster (Newton; the objective is
      // strictly concave in b).
      double b = modes_[j];
      for (int iter = 0; iter < 60; ++iter) {
        double g = -b / sigma2;
        double h = -1.0 / sigma2;
        for (int l = 0; l < mj; ++l) {
          const double mu = stats::expit(eta(l) + b);
          g += y(l) - mu;
          h -= mu * (1.0 - mu);
        }
        const double step = g / h;
        b -= step;
        if (std::fabs(step) < 1e-12) break;
      }
      modes_[j] = b;

      double curv = 1.0 / sigma2;
      for (int l = 0; l < mj; ++l) {
        const double mu = stats::expit(eta(l) + b);
        curv += mu * (1.0 - mu);
      }
      const double scale = std::sqrt(2.0 / curv);

      const int q = static_cast<int>(rule_.nodes.size());
      thread_local std::vector<double> log_terms;
      thread_local std::vector<double> node_b;
      thread_local std::vector<double> mu_buf;  // expits, reused by the gradient
      log_terms.resize(q);
      node_b.resize(q);
      if (grad != nullptr) mu_buf.resize(static_cast<std::size_t>(q) * mj);
      double max_term = -std::numeric_limits<double>::infinity();
      for (int t = 0; t < q; ++t) {
        const double bt = b + scale * rule_.nodes[t];
        node_b[t] = bt;
        double f = -0.5 * bt * bt / sigma2 - log_sigma - 0.5 * std::log(2.0 * M_PI);
        for (int l = 0; l < mj; ++l) {
          const double lp = eta(l) + bt;
          // expit and log1pexp from one exponential
          double mu, l1pe;
          if (lp >= 0.0) {
            const double e = std::exp(-lp);
            mu = 1.0 / (1.0 + e);
            l1pe = lp + std::log1p(e);
          } else {
            const double e = std::exp(lp);
            mu = e / (1.0 + e);
            l1pe = std::log1p(e);
          }
          f += y(l) * lp - l1pe;
          if (grad != nullptr) mu_buf[static_cast<std::size_t>(t) * mj + l] = mu;
        }
        const double term =
            f + rule_.nodes[t] * rule_.nodes[t] + std::log(rule_.weights[t]);
        log_terms[t] = term;
        max_term = std::max(max_term, term);
      }
      double sum = 0.0;
      for (int t = 0; t < q; ++t) sum += std::exp(log_terms[t] - max_term);
      total += max_term + std::log(sum) + std::log(scale);

      if (grad != nullptr) {
        // Posterior-weighted complete-data score at the quadrature nodes.
        for (int t = 0; t < q; ++t) {
          const double w = std::exp(log_terms[t] - max_term) / sum;
          if (w < 1e-13) continue;
          const double bt = node_b[t];
          for (int l = 0; l < mj; ++l) {
            const double resid = y(l) - mu_buf[static_cast<std::size_t>(t) * mj + l];
            grad->head(p).noalias() +=
                (w * resid) * mm_.design.row(row + l).transpose();
          }
          (*grad)(p) += w * (bt * bt / sigma2 - 1.0);
        }
      }
      row += mj;
    }
    return total;
  }

 private:
  const ModelMatrix& mm_;
  const stats::GaussHermite& rule_;
  mutable std::vector<double> modes_;
};

/// BFGS maximisation with backtracking line search (Armijo on -logL).
struct OptimResult {
  Eigen::VectorXd theta;
  double value = 0.0;
  Eigen::VectorXd grad;
  bool converged = false;
  int iterations = 0;
};

template <class F>
OptimResult maximize(const F& eval, Eigen::VectorXd theta, double grad_tol, int max_iter,
                     const Eigen::MatrixXd* hinv0 = nullptr) {
  const int n = static_cast<int>(theta.size());
  Eigen::MatrixXd hinv =
      hinv0 != nullptr ? *hinv0 : Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd grad(n);
  double f = eval.loglik(theta, &grad);

  OptimResult res;
  for (int iter = 1; iter <= max_iter; ++iter) {
    res.iterations = iter;
    if (grad.lpNorm<Eigen::Infinity>() < grad_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = hinv * grad;  // ascent direction
    double slope = grad.dot(dir);
    if (slope <= 0.0) {
      hinv = Eigen::MatrixXd::Identity(n, n);
      dir = grad;
      slope = grad.dot(dir);
    }
    // Keep the very first trial step modest when the curvature guess is poor.
    double step = 1.0;
    const double dir_norm = dir.norm();
    if (hinv0 == nullptr && iter == 1 && dir_norm > 1.0) step = 1.0 / dir_norm;
    double f_new = f;
    Eigen::VectorXd theta_new, grad_new(n);
    bool improved = false;
    for (int half = 0; half < 30; ++half) {
      theta_new = theta + step * dir;
      f_new = eval.loglik(theta_new, nullptr);
      if (std::isfinite(f_new) && f_new >= f + 1e-4 * step * slope) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;  // numerical floor; caller may polish further
    f_new = eval.loglik(theta_new, &grad_new);
    const Eigen::VectorXd s = theta_new - theta;
    const Eigen::VectorXd yv = grad_new - grad;  // note: gradient of logL
    const double sy = -s.dot(yv);                // = s'(g_old - g_new) > 0 if curvature ok
    if (sy > 1e-12) {
      // BFGS update on the inverse Hessian of -logL.
      const Eigen::VectorXd hy = hinv * (-yv);
      const double yhy = (-yv).dot(hy);
      hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
              (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    theta = theta_new;
    f = f_new;
    grad = grad_new;
  }
  res.theta = theta;
  res.value = f;
  res.grad = grad;
  if (!res.converged) {
    res.converged = grad.lpNorm<Eigen::Infinity>() < grad_tol;
  }
  return res;
}

template <class F>
Eigen::MatrixXd hessian_by_gradient_fd(const F& eval, const Eigen::VectorXd& theta) {
  const int n = static_cast<int>(theta.size());
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd gp(n), gm(n);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-5 * std::max(1.0, std::fabs(theta(j)));
    Eigen::VectorXd tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    eval.loglik(tp, &gp);
    eval.loglik(tm, &gm);
    hess.col(j) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

/// Newton steps from the finite-difference Hessian; quadratic convergence
/// mops up the last few digits when BFGS stalls near the optimum.
template <class F>
void newton_polish(const F& eval, OptimResult& res, double grad_tol, int max_steps) {
  for (int it = 0; it < max_steps; ++it) {
    if (res.grad.lpNorm<Eigen::Infinity>() < grad_tol) {
      res.converged = true;
      return;
    }
    const Eigen::MatrixXd hess = hessian_by_gradient_fd(eval, res.theta);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
    if (ldlt.info() != Eigen::Success) return;
    Eigen::VectorXd dir = ldlt.solve(res.grad);
    if (res.grad.dot(dir) <= 0.0) return;
    double step = 1.0;
    for (int half = 0; half < 20; ++half) {
      const Eigen::VectorXd trial = res.theta + step * dir;
      Eigen::VectorXd g_new;
      g_new.resize(res.theta.size());
      const double f_new = eval.loglik(trial, &g_new);
      if (std::isfinite(f_new) && f_new >= res.value - 1e-12) {
        res.theta = trial;
        res.value = f_new;
        res.grad = g_new;
        break;
      }
      step *= 0.5;
    }
  }
  res.converged = res.grad.lpNorm<Eigen::Infinity>() < grad_tol;
}

}  // namespace

double relr_loglik(const TrialDataset& dataset, const AnalysisSpec& spec,
                   const Eigen::VectorXd& theta, int quad_points,
                   const Eigen::VectorXd* covariate_means) {
  const ModelMatrix mm = build_model_matrix(dataset, spec, covariate_means);
  Evaluator eval(mm, quad_points);
  return eval.loglik(theta, nullptr);
}

Eigen::VectorXd relr_score(const TrialDataset& dataset, const AnalysisSpec& spec,
                           const Eigen::VectorXd& theta, int quad_points,
                           const Eigen::VectorXd* covariate_means) {
  const ModelMatrix mm = build_model_matrix(dataset, spec, covariate_means);
  Evaluator eval(mm, quad_points);
  Eigen::VectorXd grad;
  eval.loglik(theta, &grad);
  return grad;
}

RelrFit fit_relr(const TrialDataset& dataset, const AnalysisSpec& spec,
                 const RelrOptions& options) {
  const ModelMatrix mm = build_model_matrix(dataset, spec, options.covariate_means);
  const Eigen::Index p = mm.design.cols();

  RelrFit fit;
  fit.term_names = mm.term_names;
  fit.treatment_column = mm.treatment_column;
  fit.quad_points = options.quad_points;
  fit.clusters_arm0 = mm.clusters_arm0;
  fit.clusters_arm1 = mm.clusters_arm1;

  // Pinned variance of zero is exactly the ordinary logistic fit.
  if (options.fixed_sigma_b2 && *options.fixed_sigma_b2 <= 0.0) {
    const GlmFit glm = fit_glm(mm.design, mm.response, Link::Logit);
    fit.fixed_effects = glm.coefficients;
    fit.covariance = glm.covariance;
    fit.sigma_b2_hat = 0.0;
    fit.boundary_variance = true;
    fit.converged = glm.converged;
    fit.loglik = glm_loglik(mm.design, mm.response, glm.coefficients, Link::Logit);
    return fit;
  }

  // Warm start (and curvature guess) from the marginal logistic fit.
  Eigen::VectorXd gamma0 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd gamma_cov = Eigen::MatrixXd::Identity(p, p) * 0.05;
  try {
    const GlmFit glm = fit_glm(mm.design, mm.response, Link::Logit);
    gamma0 = glm.coefficients;
    gamma_cov = glm.covariance;
  } catch (const CrtError& e) {
    if (e.code() == ErrorCode::Separation || e.code() == ErrorCode::RankDeficient) throw;
  }

  Evaluator eval(mm, options.quad_points);

  if (options.fixed_sigma_b2) {
    // Optimise the fixed effects with log sigma held constant.
    const double log_sigma = 0.5 * std::log(*options.fixed_sigma_b2);
    // Wrap the evaluator so the variance coordinate is frozen: optimise over
    // gamma only by embedding it into the full parameter vector.
    struct Frozen {
      const Evaluator& inner;
      double log_sigma;
      Eigen::Index p;
      int n_params() const { return static_cast<int>(p); }
      double loglik(const Eigen::VectorXd& gamma, Eigen::VectorXd* grad) const {
        Eigen::VectorXd theta(p + 1);
        theta.head(p) = gamma;
        theta(p) = log_sigma;
        if (grad == nullptr) return inner.loglik(theta, nullptr);
        Eigen::VectorXd full_grad;
        const double f = inner.loglik(theta, &full_grad);
        *grad = full_grad.head(p);
        return f;
      }
    } frozen{eval, log_sigma, p};
    // Loose BFGS to get near the optimum, then Newton on the FD Hessian for
    // the final digits.
    auto res = maximize(frozen, gamma0, std::max(1e-3, options.gradient_tol), 120,
                        &gamma_cov);
    newton_polish(frozen, res, options.gradient_tol, 12);
    if (!res.converged) {
      throw CrtError(ErrorCode::NoConvergence, "RELR (pinned variance) did not converge");
    }
    Eigen::VectorXd theta(p + 1);
    theta.head(p) = res.theta;
    theta(p) = log_sigma;
    fit.fixed_effects = res.theta;
    fit.sigma_b2_hat = *options.fixed_sigma_b2;
    fit.loglik = res.value;
    fit.converged = true;
    const Eigen::MatrixXd hess = hessian_by_gradient_fd(eval, theta).topLeftCorner(p, p);
    fit.covariance = (-hess).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    return fit;
  }

  Eigen::VectorXd theta(p + 1);
  theta.head(p) = gamma0;
  theta(p) = 0.5 * std::log(0.2);  // modest starting variance

  Eigen::MatrixXd hinv0 = Eigen::MatrixXd::Zero(p + 1, p + 1);
  hinv0.topLeftCorner(p, p) = gamma_cov;
  hinv0(p, p) = 0.05;
  auto res = maximize(eval, theta, std::max(1e-3, options.gradient_tol),
                      std::min(options.max_iterations, 120), &hinv0);
  newton_polish(eval, res, options.gradient_tol, 12);
  if (!res.converged) {
    throw CrtError(ErrorCode::NoConvergence,
                   "RELR did not converge (gradient sup-norm " +
                       std::to_string(res.grad.lpNorm<Eigen::Infinity>()) + ")");
  }
  if (res.theta.head(p).lpNorm<Eigen::Infinity>() > 1e3) {
    throw CrtError(ErrorCode::Separation, "RELR fixed effects diverged; data separated");
  }

  fit.fixed_effects = res.theta.head(p);
  const double log_sigma = res.theta(p);
  fit.sigma_b2_hat = std::exp(2.0 * log_sigma);
  fit.loglik = res.value;
  fit.converged = true;
  fit.boundary_variance = log_sigma < kLogSigmaFloor;

  const Eigen::MatrixXd hess = hessian_by_gradient_fd(eval, res.theta);
  Eigen::MatrixXd neg = -hess;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(neg);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    fit.covariance =
        ldlt.solve(Eigen::MatrixXd::Identity(p + 1, p + 1)).topLeftCorner(p, p);
  } else {
    // Boundary or flat variance direction: fall back to the fixed-effects block.
    fit.covariance = (-hess.topLeftCorner(p, p))
                         .ldlt()
                         .solve(Eigen::MatrixXd::Identity(p, p));
  }
  return fit;
}

EffectEstimate relr_interval(const RelrFit& fit, double k_per_arm, double ci_level) {
  const double df = 2.0 * k_per_arm - 2.0;
  if (df <= 0.0) {
    throw CrtError(ErrorCode::NonPositiveDf, "RELR interval needs 2k-2 > 0");
  }
  const int t = fit.treatment_column;
  const double se = std::sqrt(std::max(0.0, fit.covariance(t, t)));
  return make_t_interval(EffectScale::LogOddsConditional, fit.fixed_effects(t), se, df,
                         ci_level, fit.converged);
}

}  // namespace crtmiss

#include "crtmiss/mmi.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "crtmiss/errors.hpp"
#include "crtmiss/glm.hpp"
#include "crtmiss/rng.hpp"
#include "crtmiss/stats.hpp"

namespace crtmiss {

void ImputationConfig::check() const {
  if (n_imputations < 2) {
    throw CrtError(ErrorCode::PlanInfeasible, "n_imputations must be >= 2");
  }
  if (burn_in < 0) throw CrtError(ErrorCode::PlanInfeasible, "burn_in must be >= 0");
  if (thinning < 1) throw CrtError(ErrorCode::PlanInfeasible, "thinning must be >= 1");
  if (prior_variance_shape <= 0.0 || prior_variance_scale <= 0.0) {
    throw CrtError(ErrorCode::PlanInfeasible, "variance prior parameters must be > 0");
  }
}

struct ImputationChain::Impl {
  TrialDataset dataset;
  ImputationConfig config;

  Eigen::MatrixXd x;                 // design over all individuals
  std::vector<std::int8_t> y;        // flattened outcomes (incl. missing)
  std::vector<int> cluster_sizes;
  std::vector<std::pair<int, int>> row_loc;  // (cluster, individual) per row
  Eigen::LLT<Eigen::MatrixXd> xtx_llt;

  rng::Stream stream;
  Eigen::VectorXd z, gamma, b, eta_fixed;
  double tau2 = 0.5;
  int iteration = 0;
  bool no_missing = false;

  Impl(const TrialDataset& ds, const ImputationConfig& cfg,
       const Eigen::VectorXd* covariate_means)
      : dataset(ds), config(cfg),
        stream(cfg.seed.master_seed, cfg.seed.replication_index,
               rng::Role::GibbsChain) {
    config.check();
    no_missing = dataset.total_missing() == 0;
    if (no_missing) return;

    // Imputation design over every individual: intercept + intervention +
    // covariates (+ interactions, centred like the analysis model).
    std::vector<int> cov_idx;
    for (const auto& name : config.adjust_for) {
      auto idx = dataset.covariate_index(name);
      if (!idx) {
        throw CrtError(ErrorCode::PlanInfeasible,
                       "imputation covariate '" + name + "' not in dataset");
      }
      cov_idx.push_back(*idx);
    }
    const auto n_cov = static_cast<Eigen::Index>(cov_idx.size());
    Eigen::VectorXd centres = Eigen::VectorXd::Zero(n_cov);
    if (config.include_interaction) {
      if (covariate_means != nullptr && covariate_means->size() == n_cov) {
        centres = *covariate_means;
      } else {
        for (Eigen::Index c = 0; c < n_cov; ++c) {
          centres(c) = dataset.covariate_mean(cov_idx[c]);
        }
      }
    }

    const long n = dataset.total_individuals();
    const Eigen::Index p = 2 + n_cov + (config.include_interaction ? n_cov : 0);
    x.resize(n, p);
    y.reserve(n);
    row_loc.reserve(n);
    long r = 0;
    for (std::size_t j = 0; j < dataset.clusters.size(); ++j) {
      const auto& cluster = dataset.clusters[j];
      cluster_sizes.push_back(cluster.size());
      for (int l = 0; l < cluster.size(); ++l) {
        x(r, 0) = 1.0;
        x(r, 1) = cluster.arm;
        for (Eigen::Index c = 0; c < n_cov; ++c) {
          const double v = cluster.covariates(l, cov_idx[c]) - centres(c);
          x(r, 2 + c) = v;
          if (config.include_interaction) x(r, 2 + n_cov + c) = cluster.arm * v;
        }
        y.push_back(cluster.outcomes[l]);
        row_loc.emplace_back(static_cast<int>(j), l);
        ++r;
      }
    }

    xtx_llt.compute(x.transpose() * x);
    if (xtx_llt.info() != Eigen::Success) {
      throw CrtError(ErrorCode::RankDeficient, "imputation design is rank deficient");
    }

    // Warm start: probit-scaled logistic coefficients on the observed rows.
    gamma = Eigen::VectorXd::Zero(p);
    {
      long n_obs = 0;
      for (auto v : y) n_obs += (v != kMissingOutcome);
      if (n_obs > 0) {
        Eigen::MatrixXd xo(n_obs, p);
        Eigen::VectorXd yo(n_obs);
        long ro = 0;
        for (long i = 0; i < n; ++i) {
          if (y[static_cast<std::size_t>(i)] == kMissingOutcome) continue;
          xo.row(ro) = x.row(i);
          yo(ro) = y[static_cast<std::size_t>(i)];
          ++ro;
        }
        try {
          gamma = 0.588 * fit_glm(xo, yo, Link::Logit).coefficients;
        } catch (const CrtError&) {
          gamma.setZero();
        }
      }
    }

    z.resize(n);
    for (long i = 0; i < n; ++i) {
      const auto v = y[static_cast<std::size_t>(i)];
      z(i) = v == 1 ? 0.5 : (v == 0 ? -0.5 : 0.0);
    }
    b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cluster_sizes.size()));
    tau2 = 0.5;
    eta_fixed = x * gamma;
  }

  void step() {
    const long n = z.size();
    const Eigen::Index p = x.cols();
    const auto n_clusters = static_cast<Eigen::Index>(cluster_sizes.size());

    // 1. Latent responses given (gamma, b).
    {
      long r = 0;
      for (Eigen::Index j = 0; j < n_clusters; ++j) {
        const double bj = b(j);
        for (int l = 0; l < cluster_sizes[static_cast<std::size_t>(j)]; ++l, ++r) {
          const double mean = eta_fixed(r) + bj;
          const auto v = y[static_cast<std::size_t>(r)];
          if (v == kMissingOutcome) {
            z(r) = stream.normal(mean, 1.0);
          } else {
            z(r) = stream.truncated_standard_normal(mean, v == 1);
          }
        }
      }
    }

    // 2. Fixed effects given (z, b): flat prior, residual variance 1.
    {
      Eigen::VectorXd zb(n);
      long r = 0;
      for (Eigen::Index j = 0; j < n_clusters; ++j) {
        for (int l = 0; l < cluster_sizes[static_cast<std::size_t>(j)]; ++l, ++r) {
          zb(r) = z(r) - b(j);
        }
      }
      const Eigen::VectorXd mean = xtx_llt.solve(x.transpose() * zb);
      Eigen::VectorXd eps(p);
      for (Eigen::Index c = 0; c < p; ++c) eps(c) = stream.normal();
      gamma = mean + xtx_llt.matrixU().solve(eps);
      eta_fixed.noalias() = x * gamma;
    }

    // 3. Cluster intercepts given (z, gamma, tau2).
    {
      long r = 0;
      for (Eigen::Index j = 0; j < n_clusters; ++j) {
        const int mj = cluster_sizes[static_cast<std::size_t>(j)];
        double s = 0.0;
        for (int l = 0; l < mj; ++l, ++r) s += z(r) - eta_fixed(r);
        const double prec = mj + 1.0 / tau2;
        b(j) = s / prec + stream.normal() / std::sqrt(prec);
      }
    }

    // 4. Random-intercept variance: conjugate inverse-gamma.
    {
      const double shape = config.prior_variance_shape + 0.5 * n_clusters;
      const double rate = config.prior_variance_scale + 0.5 * b.squaredNorm();
      tau2 = rate / stream.gamma(shape);
    }

    ++iteration;
    if (!std::isfinite(tau2) || tau2 <= 0.0 || !gamma.allFinite()) {
      throw CrtError(ErrorCode::SamplerDivergence,
                     "imputation sampler diverged at iteration " +
                         std::to_string(iteration));
    }
  }

  TrialDataset emit() const {
    TrialDataset out = dataset;
    for (long r = 0; r < z.size(); ++r) {
      const auto [j, l] = row_loc[static_cast<std::size_t>(r)];
      if (out.clusters[static_cast<std::size_t>(j)].outcomes[static_cast<std::size_t>(l)] ==
          kMissingOutcome) {
        out.clusters[static_cast<std::size_t>(j)].outcomes[static_cast<std::size_t>(l)] =
            z(r) > 0.0 ? 1 : 0;
      }
    }
    return out;
  }
};

ImputationChain::ImputationChain(const TrialDataset& dataset, const ImputationConfig& config,
                                 const Eigen::VectorXd* covariate_means)
    : impl_(std::make_unique<Impl>(dataset, config, covariate_means)) {}

ImputationChain::~ImputationChain() = default;
ImputationChain::ImputationChain(ImputationChain&&) noexcept = default;

TrialDataset ImputationChain::next() {
  if (impl_->no_missing) return impl_->dataset;
  const int target = impl_->iteration == 0
                         ? impl_->config.burn_in + impl_->config.thinning
                         : impl_->iteration + impl_->config.thinning;
  while (impl_->iteration < target) impl_->step();
  return impl_->emit();
}

int ImputationChain::iteration() const { return impl_->iteration; }
bool ImputationChain::nothing_missing() const { return impl_->no_missing; }

ImputationSet impute(const TrialDataset& dataset, const ImputationConfig& config,
                     const Eigen::VectorXd* covariate_means) {
  config.check();
  ImputationChain chain(dataset, config, covariate_means);
  ImputationSet set;
  set.master_seed = config.seed.master_seed;
  set.replication_index = config.seed.replication_index;
  set.burn_in = config.burn_in;
  set.thinning = config.thinning;
  set.completed.reserve(config.n_imputations);
  for (int i = 0; i < config.n_imputations; ++i) {
    set.completed.push_back(chain.next());
    set.iteration_indices.push_back(chain.iteration());
  }
  return set;
}

PooledEstimate pool(std::span<const std::pair<double, double>> estimates_and_variances,
                    double nu_com, double ci_level) {
  const std::size_t n = estimates_and_variances.size();
  if (n < 2) {
    throw CrtError(ErrorCode::PlanInfeasible, "pooling requires at least 2 imputations");
  }
  const double nd = static_cast<double>(n);
  PooledEstimate out;
  out.nu_com = nu_com;
  out.ci_level = ci_level;

  std::vector<double> ests(n);
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ests[i] = estimates_and_variances[i].first;
    if (estimates_and_variances[i].second < 0.0) {
      throw CrtError(ErrorCode::PlanInfeasible, "negative within-imputation variance");
    }
    w += estimates_and_variances[i].second;
  }
  w /= nd;
  out.estimate = stats::mean(ests);
  out.within_var = w;
  out.between_var = stats::sample_variance(ests);
  out.total_var = w + (1.0 + 1.0 / nd) * out.between_var;

  const double b = out.between_var;
  if (b > 0.0) {
    const double ratio = w / b;
    out.nu = (nd - 1.0) * std::pow(1.0 + nd / (nd + 1.0) * ratio, 2.0);
  } else {
    out.nu = std::numeric_limits<double>::infinity();
  }
  const double shrink =
      w > 0.0 ? 1.0 / (1.0 + (nd + 1.0) / nd * (b / w)) : (b > 0.0 ? 0.0 : 1.0);
  out.nu_obs_hat = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * shrink;
  out.nu_adj = std::isinf(out.nu) ? out.nu_obs_hat
                                  : 1.0 / (1.0 / out.nu + 1.0 / out.nu_obs_hat);

  const double se = std::sqrt(out.total_var);
  if (se > 0.0) {
    const double t = stats::student_t_quantile(out.nu_adj, 0.5 + ci_level / 2.0);
    out.ci_lower = out.estimate - t * se;
    out.ci_upper = out.estimate + t * se;
  } else {
    out.ci_lower = out.ci_upper = out.estimate;
  }
  return out;
}

namespace {

EffectEstimate pooled_effect(const std::vector<std::pair<double, double>>& pairs,
                             Method method, double nu_com, double ci_level) {
  const PooledEstimate pe = pool(pairs, nu_com, ci_level);
  EffectEstimate e;
  e.scale = method_scale(method);
  e.estimate = pe.estimate;
  e.se = std::sqrt(pe.total_var);
  e.df = pe.nu_adj;
  e.ci_level = ci_level;
  e.ci_lower = pe.ci_lower;
  e.ci_upper = pe.ci_upper;
  e.converged = true;
  return e;
}

double complete_data_df(const TrialDataset& ds) {
  return static_cast<double>(ds.clusters_in_arm(0) + ds.clusters_in_arm(1)) - 2.0;
}

}  // namespace

EffectEstimate mmi_analyze(const TrialDataset& dataset, const ImputationConfig& config,
                           Method method, const AnalysisSpec& spec, double ci_level,
                           const Eigen::VectorXd* covariate_means) {
  config.check();
  ImputationChain chain(dataset, config, covariate_means);
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(config.n_imputations);
  double nu_com = complete_data_df(dataset);
  int failures = 0;
  bool df_adjusted = false;
  for (int i = 0; i < config.n_imputations; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < 2 && !done; ++attempt) {
      const TrialDataset completed = chain.next();
      try {
        const MethodResult res =
            run_method_full(completed, method, spec, ci_level, covariate_means);
        if (!df_adjusted) {
          nu_com -= res.d_cluster_level_params;
          df_adjusted = true;
        }
        pairs.emplace_back(res.estimate.estimate, res.estimate.se * res.estimate.se);
        done = true;
      } catch (const CrtError&) {
        if (attempt == 1) ++failures;
      }
    }
  }
  if (failures * 5 > config.n_imputations || pairs.size() < 2) {
    throw CrtError(ErrorCode::TooManyImputationFailures,
                   std::to_string(failures) + " of " +
                       std::to_string(config.n_imputations) +
                       " imputation analyses failed");
  }
  return pooled_effect(pairs, method, nu_com, ci_level);
}

EffectEstimate mmi_pool_over_set(const ImputationSet& set, Method method,
                                 const AnalysisSpec& spec, double ci_level,
                                 const Eigen::VectorXd* covariate_means,
                                 bool* fell_back) {
  if (set.completed.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible, "empty imputation set");
  }
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(set.completed.size());
  double nu_com = complete_data_df(set.completed.front());
  int failures = 0;
  bool df_adjusted = false;
  if (fell_back != nullptr) *fell_back = false;
  for (const auto& completed : set.completed) {
    try {
      const MethodResult res =
          run_method_full(completed, method, spec, ci_level, covariate_means);
      if (!df_adjusted) {
        nu_com -= res.d_cluster_level_params;
        df_adjusted = true;
      }
      if (fell_back != nullptr && res.fell_back_to_independence) *fell_back = true;
      pairs.emplace_back(res.estimate.estimate, res.estimate.se * res.estimate.se);
    } catch (const CrtError&) {
      ++failures;
    }
  }
  if (failures * 5 > static_cast<int>(set.completed.size()) || pairs.size() < 2) {
    throw CrtError(ErrorCode::TooManyImputationFailures,
                   std::to_string(failures) + " of " +
                       std::to_string(set.completed.size()) +
                       " imputation analyses failed");
  }
  return pooled_effect(pairs, method, nu_com, ci_level);
}

}  // namespace crtmiss

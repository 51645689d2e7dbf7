#include "crtmiss/sim_harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "crtmiss/errors.hpp"
#include "crtmiss/rng.hpp"
#include "crtmiss/stats.hpp"
#include "crtmiss/trial_data.hpp"

namespace crtmiss {

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Full: return "full";
    case Strategy::Cra: return "cra";
    case Strategy::Mmi: return "mmi";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "full") return Strategy::Full;
  if (name == "cra") return Strategy::Cra;
  if (name == "mmi") return Strategy::Mmi;
  throw CrtError(ErrorCode::PlanInfeasible, "unknown strategy '" + name + "'");
}

int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CRTSIM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void SimulationPlan::check() const {
  if (replications < 1) {
    throw CrtError(ErrorCode::PlanInfeasible, "replications must be >= 1");
  }
  if (methods.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible, "plan has no methods");
  }
  if (strategies.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible, "plan has no strategies");
  }
  if (k_values.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible, "plan has no k values");
  }
  for (int k : k_values) {
    if (k < 2) throw CrtError(ErrorCode::PlanInfeasible, "k must be >= 2");
  }
  if (m < 1) throw CrtError(ErrorCode::PlanInfeasible, "m must be >= 1");
  if (ci_level <= 0.0 || ci_level >= 1.0) {
    throw CrtError(ErrorCode::PlanInfeasible, "ci_level must be in (0,1)");
  }
  ScenarioConfig sc = scenario;
  sc.k = k_values.front();
  sc.m = m;
  sc.check();
  imputation.check();

  bool wants_mmi = false;
  for (auto s : strategies) wants_mmi |= (s == Strategy::Mmi);
  if (wants_mmi) {
    // A plan whose missingness model cannot produce missing outcomes makes
    // the MMI strategy meaningless.
    const double var_x = scenario.covariate_variance();
    const double frac0 = stats::expit_normal_mean(scenario.psi_control,
                                                  scenario.phi_control, scenario.mu_x,
                                                  var_x);
    const double frac1 = stats::expit_normal_mean(scenario.psi_treat, scenario.phi_treat,
                                                  scenario.mu_x, var_x);
    if (frac0 < 1e-9 && frac1 < 1e-9) {
      throw CrtError(ErrorCode::PlanInfeasible,
                     "MMI strategy requested but the scenario generates no missing "
                     "outcomes");
    }
  }
}

namespace {

AnalysisSpec spec_for(Method method, bool use_interaction) {
  AnalysisSpec spec;
  spec.adjust_for = {"x"};
  if (!method_is_cluster_level(method) && use_interaction) {
    spec.include_interaction = true;
    spec.center_covariates = true;
  }
  return spec;
}

double full_data_arm_rate(const TrialDataset& ds, int arm) {
  long n = 0, s = 0;
  for (const auto& cluster : ds.clusters) {
    if (cluster.arm != arm) continue;
    n += cluster.size();
    s += cluster.success_count();
  }
  return static_cast<double>(s) / static_cast<double>(n);
}

struct CellState {
  std::vector<double> estimates;
  std::vector<double> ses;
  int covered = 0;
  int failed = 0;
  int fallback = 0;
};

}  // namespace

TruthValue empirical_truth(const ScenarioConfig& scenario, int k, int m,
                           int replications, EffectScale scale,
                           std::uint64_t master_seed, bool use_interaction) {
  if (scale == EffectScale::LogOddsConditional) {
    return {scenario.beta1, 0.0};
  }
  ScenarioConfig config = scenario;
  config.k = k;
  config.m = m;
  const std::uint64_t seed =
      rng::sub_seed(master_seed, 0x7472757468ull + static_cast<std::uint64_t>(scale));

  const int threads = resolve_thread_count(0);
  std::vector<double> values(replications,
                             std::numeric_limits<double>::quiet_NaN());
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= replications) break;
      const TrialPair pair = generate_trial_pair(config, SeedSpec{seed, static_cast<std::uint64_t>(r)});
      switch (scale) {
        case EffectScale::RiskDifference:
          values[r] = full_data_arm_rate(pair.full, 1) - full_data_arm_rate(pair.full, 0);
          break;
        case EffectScale::LogRiskRatio:
          values[r] = std::log(full_data_arm_rate(pair.full, 1) /
                               full_data_arm_rate(pair.full, 0));
          break;
        case EffectScale::LogOddsMarginal: {
          const AnalysisSpec spec = spec_for(Method::GeeLogit, use_interaction);
          try {
            const MethodResult res =
                run_method_full(pair.full, Method::GeeLogit, spec, 0.95, nullptr);
            values[r] = res.estimate.estimate;
          } catch (const CrtError&) {
            // left as NaN; excluded below
          }
          break;
        }
        default: break;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<double> kept;
  kept.reserve(values.size());
  for (double v : values) {
    if (std::isfinite(v)) kept.push_back(v);
  }
  if (kept.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible, "empirical truth: no replication succeeded");
  }
  TruthValue out;
  out.value = stats::mean(kept);
  out.mc_error = std::sqrt(stats::sample_variance(kept) / static_cast<double>(kept.size()));
  return out;
}

SimulationSummary run_plan(const SimulationPlan& plan) {
  plan.check();
  const bool use_interaction = plan.use_interaction();

  SimulationSummary summary;
  summary.replications = plan.replications;
  summary.ci_level = plan.ci_level;

  // Establish the coverage targets once per scale.
  std::map<EffectScale, double> truths;
  for (Method method : plan.methods) {
    const EffectScale scale = method_scale(method);
    if (truths.count(scale)) continue;
    auto it = plan.truth_overrides.find(scale);
    if (it != plan.truth_overrides.end()) {
      truths[scale] = it->second;
      summary.truth_mc_errors[scale] = 0.0;
    } else {
      const TruthValue tv =
          empirical_truth(plan.scenario, 50, plan.m, plan.truth_replications, scale,
                          plan.master_seed, use_interaction);
      truths[scale] = tv.value;
      summary.truth_mc_errors[scale] = tv.mc_error;
    }
  }
  summary.truths = truths;

  const int n_methods = static_cast<int>(plan.methods.size());
  const int n_strategies = static_cast<int>(plan.strategies.size());
  const int cells_per_k = n_methods * n_strategies;

  bool any_mmi = false;
  for (auto s : plan.strategies) any_mmi |= (s == Strategy::Mmi);

  for (std::size_t ki = 0; ki < plan.k_values.size(); ++ki) {
    const int k = plan.k_values[ki];
    ScenarioConfig config = plan.scenario;
    config.k = k;
    config.m = plan.m;
    const std::uint64_t k_seed =
        rng::sub_seed(plan.master_seed, 0x6b00ull + static_cast<std::uint64_t>(k));

    // Per-replication records, reduced in index order afterwards so that the
    // result is independent of scheduling.
    std::vector<ReplicationRecord> records(
        static_cast<std::size_t>(plan.replications) * cells_per_k);

    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= plan.replications) break;
        const SeedSpec seed{k_seed, static_cast<std::uint64_t>(r)};
        const TrialPair pair = generate_trial_pair(config, seed);
        const Eigen::VectorXd means =
            (Eigen::VectorXd(1) << pair.observed.covariate_mean(0)).finished();

        std::optional<ImputationSet> imputations;
        if (any_mmi) {
          ImputationConfig icfg = plan.imputation;
          icfg.seed = seed;
          icfg.adjust_for = {"x"};
          icfg.include_interaction = use_interaction;
          imputations.emplace(impute(pair.observed, icfg, &means));
        }

        for (int mi = 0; mi < n_methods; ++mi) {
          const Method method = plan.methods[mi];
          const AnalysisSpec spec = spec_for(method, use_interaction);
          for (int si = 0; si < n_strategies; ++si) {
            const Strategy strategy = plan.strategies[si];
            ReplicationRecord rec;
            rec.replication = r;
            rec.k = k;
            rec.method = method;
            rec.strategy = strategy;
            try {
              if (strategy == Strategy::Full) {
                const MethodResult res =
                    run_method_full(pair.full, method, spec, plan.ci_level, &means);
                rec.estimate = res.estimate.estimate;
                rec.se = res.estimate.se;
                rec.ci_lower = res.estimate.ci_lower;
                rec.ci_upper = res.estimate.ci_upper;
                rec.converged = res.estimate.converged;
                rec.fell_back = res.fell_back_to_independence;
              } else if (strategy == Strategy::Cra) {
                const MethodResult res =
                    run_method_cra(pair.observed, method, spec, plan.ci_level, &means);
                rec.estimate = res.estimate.estimate;
                rec.se = res.estimate.se;
                rec.ci_lower = res.estimate.ci_lower;
                rec.ci_upper = res.estimate.ci_upper;
                rec.converged = res.estimate.converged;
                rec.fell_back = res.fell_back_to_independence;
              } else {
                bool fell_back = false;
                const EffectEstimate est = mmi_pool_over_set(
                    *imputations, method, spec, plan.ci_level, &means, &fell_back);
                rec.estimate = est.estimate;
                rec.se = est.se;
                rec.ci_lower = est.ci_lower;
                rec.ci_upper = est.ci_upper;
                rec.converged = est.converged;
                rec.fell_back = fell_back;
              }
            } catch (const CrtError&) {
              rec.converged = false;
              rec.estimate = rec.se = std::numeric_limits<double>::quiet_NaN();
            }
            records[static_cast<std::size_t>(r) * cells_per_k + mi * n_strategies + si] =
                rec;
          }
        }
      }
    };

    const int threads = resolve_thread_count(plan.threads);
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    // Reduce in replication order.
    std::vector<CellState> states(cells_per_k);
    for (int r = 0; r < plan.replications; ++r) {
      for (int c = 0; c < cells_per_k; ++c) {
        const ReplicationRecord& rec =
            records[static_cast<std::size_t>(r) * cells_per_k + c];
        CellState& state = states[c];
        if (!rec.converged || !std::isfinite(rec.estimate)) {
          state.failed += 1;
          continue;
        }
        state.estimates.push_back(rec.estimate);
        state.ses.push_back(rec.se);
        const double truth = truths.at(method_scale(rec.method));
        if (rec.ci_lower <= truth && truth <= rec.ci_upper) state.covered += 1;
        if (rec.fell_back) state.fallback += 1;
      }
    }
    for (int mi = 0; mi < n_methods; ++mi) {
      for (int si = 0; si < n_strategies; ++si) {
        const CellState& state = states[mi * n_strategies + si];
        CellSummary cell;
        cell.k = k;
        cell.method = plan.methods[mi];
        cell.strategy = plan.strategies[si];
        cell.truth = truths.at(method_scale(cell.method));
        cell.n_used = static_cast<int>(state.estimates.size());
        cell.n_nonconverged = state.failed;
        cell.n_fallback = state.fallback;
        if (cell.n_used > 0) {
          cell.avg_estimate = stats::mean(state.estimates);
          cell.avg_se = stats::mean(state.ses);
          cell.coverage_pct = 100.0 * state.covered / cell.n_used;
          cell.mc_error_estimate =
              std::sqrt(stats::sample_variance(state.estimates) / cell.n_used);
          cell.mc_error_se = std::sqrt(stats::sample_variance(state.ses) / cell.n_used);
        }
        summary.cells.push_back(cell);
      }
    }
    summary.log.insert(summary.log.end(), records.begin(), records.end());
  }
  return summary;
}

namespace {

std::string format_estimate(Method method, double value, double scale_pct) {
  char buf[64];
  if (method_scale(method) == EffectScale::RiskDifference) {
    std::snprintf(buf, sizeof(buf), "%.1f", value * scale_pct);
  } else {
    std::snprintf(buf, sizeof(buf), "%.3f", value);
  }
  return buf;
}

std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
  return buf;
}

}  // namespace

std::string emit_table(const SimulationSummary& summary, TableFormat format) {
  std::ostringstream out;
  const char* headers[] = {"k",      "method",  "strategy",    "avg_estimate",
                           "avg_se", "coverage", "mc_err_est", "mc_err_se",
                           "nonconv", "n_used",  "truth"};
  const int n_cols = 11;
  if (format == TableFormat::Csv) {
    for (int c = 0; c < n_cols; ++c) out << (c ? "," : "") << headers[c];
    out << "\n";
  } else {
    out << "|";
    for (const auto* h : headers) out << " " << h << " |";
    out << "\n|";
    for (int c = 0; c < n_cols; ++c) out << "---|";
    out << "\n";
  }
  for (const auto& cell : summary.cells) {
    std::vector<std::string> cols = {
        std::to_string(cell.k),
        to_string(cell.method),
        to_string(cell.strategy),
        format_estimate(cell.method, cell.avg_estimate, 100.0),
        fixed(cell.avg_se, 3),
        fixed(cell.coverage_pct, 1),
        fixed(cell.mc_error_estimate, 5),
        fixed(cell.mc_error_se, 5),
        std::to_string(cell.n_nonconverged),
        std::to_string(cell.n_used),
        format_estimate(cell.method, cell.truth, 100.0),
    };
    if (format == TableFormat::Csv) {
      for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
      out << "\n";
    } else {
      out << "|";
      for (const auto& col : cols) out << " " << col << " |";
      out << "\n";
    }
  }
  return out.str();
}

std::string emit_replication_log(const SimulationSummary& summary) {
  std::ostringstream out;
  for (const auto& rec : summary.log) {
    out << "{\"replication\":" << rec.replication << ",\"k\":" << rec.k
        << ",\"method\":\"" << to_string(rec.method) << "\",\"strategy\":\""
        << to_string(rec.strategy) << "\"";
    if (rec.converged) {
      out << ",\"estimate\":" << rec.estimate << ",\"se\":" << rec.se
          << ",\"ci_lower\":" << rec.ci_lower << ",\"ci_upper\":" << rec.ci_upper;
    }
    out << ",\"converged\":" << (rec.converged ? "true" : "false")
        << ",\"fell_back\":" << (rec.fell_back ? "true" : "false") << "}\n";
  }
  return out.str();
}

}  // namespace crtmiss

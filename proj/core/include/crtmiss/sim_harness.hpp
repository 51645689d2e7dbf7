#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crtmiss/datagen.hpp"
#include "crtmiss/methods.hpp"
#include "crtmiss/mmi.hpp"

namespace crtmiss {

enum class Strategy { Full, Cra, Mmi };

std::string to_string(Strategy strategy);
Strategy strategy_from_string(const std::string& name);

struct SimulationPlan {
  ScenarioConfig scenario;
  std::string scenario_name;  // builtin name, or empty for a custom config
  std::vector<int> k_values = {10};
  int m = 50;
  int replications = 1000;
  std::vector<Method> methods;
  std::vector<Strategy> strategies = {Strategy::Full, Strategy::Cra, Strategy::Mmi};
  ImputationConfig imputation;
  double ci_level = 0.95;
  std::uint64_t master_seed = 1;
  /// Interaction terms for RELR/GEE and the imputation model; defaults to
  /// "on when the scenario has arm-specific covariate slopes".
  std::optional<bool> interaction_override;
  std::map<EffectScale, double> truth_overrides;
  int truth_replications = 1000;
  int threads = 0;  // 0 = CRTSIM_THREADS env or hardware concurrency

  bool use_interaction() const {
    return interaction_override.value_or(scenario.arm_specific_slopes());
  }
  void check() const;  // throws CrtError(PlanInfeasible)
};

struct CellSummary {
  int k = 0;
  Method method = Method::ClU_Rd;
  Strategy strategy = Strategy::Full;
  double truth = 0.0;
  double avg_estimate = 0.0;
  double avg_se = 0.0;
  double coverage_pct = 0.0;
  double mc_error_estimate = 0.0;  // SD(estimates)/sqrt(n_used)
  double mc_error_se = 0.0;
  int n_used = 0;           // replications contributing to the averages
  int n_nonconverged = 0;   // replications where the cell's analysis failed
  int n_fallback = 0;       // GEE independence fallbacks among n_used
};

struct ReplicationRecord {
  int replication = 0;
  int k = 0;
  Method method = Method::ClU_Rd;
  Strategy strategy = Strategy::Full;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  bool converged = false;
  bool fell_back = false;
};

struct SimulationSummary {
  std::vector<CellSummary> cells;  // deterministic order: k, method, strategy
  std::map<EffectScale, double> truths;
  std::map<EffectScale, double> truth_mc_errors;
  std::vector<ReplicationRecord> log;  // replication-major order
  int replications = 0;
  double ci_level = 0.95;
};

struct TruthValue {
  double value = 0.0;
  double mc_error = 0.0;
};

/// Empirically establishes the target of coverage for one scale by averaging
/// the full-data quantity over `replications` generated datasets: arm-level
/// success rates for RD/logRR, the full-data GEE estimate for the marginal
/// log OR, and the generative coefficient for the conditional log OR.
TruthValue empirical_truth(const ScenarioConfig& scenario, int k, int m,
                           int replications, EffectScale scale,
                           std::uint64_t master_seed, bool use_interaction);

SimulationSummary run_plan(const SimulationPlan& plan);

enum class TableFormat { Csv, Markdown };

/// Deterministic table rendering (column order k | method | strategy |
/// avg estimate | avg SE | coverage | MC errors | nonconv); RD estimates as
/// percent to 1 decimal, other scales to 3 decimals.
std::string emit_table(const SimulationSummary& summary, TableFormat format);

/// One JSON object per replication record (the audit log).
std::string emit_replication_log(const SimulationSummary& summary);

int resolve_thread_count(int requested);

}  // namespace crtmiss

// crtsim: simulate | analyze | impute for clustered binary-outcome trials.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crtmiss/cluster_level.hpp"
#include "crtmiss/csv_io.hpp"
#include "crtmiss/errors.hpp"
#include "crtmiss/gee.hpp"
#include "crtmiss/methods.hpp"
#include "crtmiss/mmi.hpp"
#include "crtmiss/model_matrix.hpp"
#include "crtmiss/plan_file.hpp"
#include "crtmiss/relr.hpp"
#include "crtmiss/sim_harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crtmiss;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInputError = 2;
constexpr int kExitRuntimeError = 3;

bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadPlanFile:
    case ErrorCode::BadDatasetFile:
    case ErrorCode::UnknownScenario:
    case ErrorCode::PlanInfeasible:
    case ErrorCode::EmptyArm:
    case ErrorCode::NonBinaryOutcome:
    case ErrorCode::MissingCovariate:
      return true;
    default:
      return false;
  }
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) items.push_back(item.substr(b, e - b + 1));
  }
  return items;
}

// -------------------------------------------------------------- simulate ---

int cmd_simulate(const std::string& plan_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed, std::optional<int> reps,
                 std::optional<std::string> format) {
  LoadedPlan loaded = read_plan_file(plan_path);
  if (seed) loaded.plan.master_seed = *seed;
  if (reps) loaded.plan.replications = *reps;
  if (format) {
    if (*format != "csv" && *format != "markdown" && *format != "both") {
      throw CrtError(ErrorCode::BadPlanFile, "--format must be csv, markdown, or both");
    }
    loaded.output.format = *format;
  }
  loaded.plan.check();

  fs::create_directories(out_dir);
  const SimulationSummary summary = run_plan(loaded.plan);

  const fs::path dir(out_dir);
  if (loaded.output.format == "csv" || loaded.output.format == "both") {
    std::ofstream f(dir / "table.csv");
    f << emit_table(summary, TableFormat::Csv);
  }
  if (loaded.output.format == "markdown" || loaded.output.format == "both") {
    std::ofstream f(dir / "table.md");
    f << emit_table(summary, TableFormat::Markdown);
  }
  if (loaded.output.write_log) {
    std::ofstream f(dir / "replications.jsonl");
    f << emit_replication_log(summary);
  }
  {
    std::ofstream f(dir / "resolved_plan.ini");
    f << write_resolved_plan(loaded);
  }
  std::cout << "wrote " << (dir / "table.*").string() << " ("
            << summary.cells.size() << " cells, " << summary.replications
            << " replications)\n";
  return kExitOk;
}

// --------------------------------------------------------------- analyze ---

struct AnalyzeRow {
  Method method;
  Strategy strategy;
  std::optional<EffectEstimate> estimate;
  std::string error;
  long n0 = 0, n1 = 0;
};

void count_used(const TrialDataset& ds, bool complete_only, long& n0, long& n1) {
  n0 = n1 = 0;
  for (const auto& cluster : ds.clusters) {
    const long n = complete_only ? cluster.observed_count() : cluster.size();
    (cluster.arm == 0 ? n0 : n1) += n;
  }
}

int cmd_analyze(const std::string& csv_path, const std::string& methods_arg,
                const std::string& adjust_arg, bool interaction,
                const std::string& strategy_arg, int n_imputations, int burn_in,
                int thinning, double ci_level, std::uint64_t seed) {
  const TrialDataset ds = read_dataset_csv(csv_path);

  std::vector<Method> methods;
  for (const auto& name : split_list(methods_arg)) {
    methods.push_back(method_from_string(name));
  }
  if (methods.empty()) {
    throw CrtError(ErrorCode::PlanInfeasible, "--methods must name at least one method");
  }
  std::vector<Strategy> strategies;
  for (const auto& name : split_list(strategy_arg)) {
    const Strategy s = strategy_from_string(name);
    if (s == Strategy::Full) {
      throw CrtError(ErrorCode::PlanInfeasible,
                     "--strategy accepts cra and mmi (full data is just cra with "
                     "nothing missing)");
    }
    strategies.push_back(s);
  }

  AnalysisSpec spec;
  spec.adjust_for = adjust_arg.empty() ? ds.covariate_names : split_list(adjust_arg);
  spec.include_interaction = interaction;
  spec.center_covariates = interaction;
  spec.check();
  const Eigen::VectorXd means = covariate_grand_means(ds, spec);

  ImputationConfig icfg;
  icfg.n_imputations = n_imputations;
  icfg.burn_in = burn_in;
  icfg.thinning = thinning;
  icfg.adjust_for = spec.adjust_for;
  icfg.include_interaction = interaction;
  icfg.seed = SeedSpec{seed, 0};

  std::vector<AnalyzeRow> rows;
  for (const Strategy strategy : strategies) {
    for (const Method method : methods) {
      AnalyzeRow row;
      row.method = method;
      row.strategy = strategy;
      count_used(ds, strategy == Strategy::Cra, row.n0, row.n1);
      try {
        AnalysisSpec mspec = spec;
        if (method_is_cluster_level(method)) {
          // the first-stage model never includes intervention or interactions
          mspec.include_interaction = false;
          mspec.center_covariates = false;
        }
        if (strategy == Strategy::Cra) {
          row.estimate = run_method_cra(ds, method, mspec, ci_level, &means).estimate;
        } else {
          row.estimate = mmi_analyze(ds, icfg, method, mspec, ci_level, &means);
        }
      } catch (const CrtError& e) {
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }

  std::cout << "method,strategy,scale,estimate,ci_lower,ci_upper,n0,n1\n";
  std::cout << std::setprecision(4) << std::fixed;
  for (const auto& row : rows) {
    std::cout << to_string(row.method) << "," << to_string(row.strategy) << ",";
    if (row.estimate) {
      const EffectEstimate& e = *row.estimate;
      const bool exponentiate = e.scale != EffectScale::RiskDifference;
      const auto show = [&](double v) { return exponentiate ? std::exp(v) : v; };
      std::string scale = to_string(e.scale);
      if (exponentiate) {
        scale = e.scale == EffectScale::LogRiskRatio ? "RR" : "OR";
      }
      std::cout << scale << "," << show(e.estimate) << "," << show(e.ci_lower) << ","
                << show(e.ci_upper) << "," << row.n0 << "," << row.n1 << "\n";
    } else {
      std::cout << to_string(method_scale(row.method)) << ",error: " << row.error
                << ",,," << row.n0 << "," << row.n1 << "\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------- impute ---

int cmd_impute(const std::string& csv_path, const std::string& out_dir,
               int n_imputations, int burn_in, int thinning, std::uint64_t seed,
               const std::string& adjust_arg, bool interaction) {
  const TrialDataset ds = read_dataset_csv(csv_path);

  ImputationConfig config;
  config.n_imputations = n_imputations;
  config.burn_in = burn_in;
  config.thinning = thinning;
  config.adjust_for = adjust_arg.empty() ? ds.covariate_names : split_list(adjust_arg);
  config.include_interaction = interaction;
  config.seed = SeedSpec{seed, 0};
  config.check();

  if (ds.total_missing() == 0) {
    std::cerr << "warning: no missing outcomes in " << csv_path
              << "; emitting identical copies\n";
  }

  fs::create_directories(out_dir);
  const ImputationSet set = impute(ds, config);

  const fs::path dir(out_dir);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < set.completed.size(); ++i) {
    std::ostringstream name;
    name << "imp_" << std::setw(3) << std::setfill('0') << (i + 1) << ".csv";
    write_dataset_csv_file(set.completed[i], (dir / name.str()).string());
    files.push_back(name.str());
  }
  json manifest;
  manifest["source"] = csv_path;
  manifest["seed"] = seed;
  manifest["imputations"] = n_imputations;
  manifest["burn_in"] = burn_in;
  manifest["thinning"] = thinning;
  manifest["adjust_for"] = config.adjust_for;
  manifest["interaction"] = interaction;
  manifest["iteration_indices"] = set.iteration_indices;
  manifest["files"] = files;
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";

  std::cout << "wrote " << files.size() << " completed datasets and manifest.json to "
            << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster randomised trial simulation and missing-outcome analysis"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo plan file");
  std::string plan_path, out_dir = "out";
  std::optional<std::uint64_t> seed_override;
  std::optional<int> reps_override;
  std::optional<std::string> format_override;
  sim->add_option("plan", plan_path, "Plan file (INI)")->required();
  sim->add_option("--out", out_dir, "Output directory")->capture_default_str();
  sim->add_option("--seed", seed_override, "Override the plan master seed");
  sim->add_option("--reps", reps_override, "Override the replication count");
  sim->add_option("--format", format_override, "csv | markdown | both");

  // analyze
  auto* ana = app.add_subcommand("analyze", "Analyse a dataset CSV under CRA and/or MMI");
  std::string csv_path;
  std::string methods_arg = "CL_U-RD,CL_U-RR,CL_A-RD,CL_A-RR,RELR,GEE-logit,GEE-log";
  std::string adjust_arg;
  std::string strategy_arg = "cra,mmi";
  bool interaction = false;
  int n_imputations = 15, burn_in = 100, thinning = 25;
  double ci_level = 0.95;
  std::uint64_t seed = 20240101;
  ana->add_option("data", csv_path, "Dataset CSV")->required();
  ana->add_option("--methods", methods_arg, "Comma-separated methods")
      ->capture_default_str();
  ana->add_option("--adjust", adjust_arg,
                  "Covariates to adjust for (default: all columns)");
  ana->add_flag("--interaction", interaction,
                "Include intervention x covariate interactions (centred)");
  ana->add_option("--strategy", strategy_arg, "cra, mmi, or both")->capture_default_str();
  ana->add_option("--imputations", n_imputations, "Number of imputations")
      ->capture_default_str();
  ana->add_option("--burn-in", burn_in, "Gibbs burn-in iterations")->capture_default_str();
  ana->add_option("--thin", thinning, "Gibbs thinning interval")->capture_default_str();
  ana->add_option("--ci", ci_level, "Confidence level")->capture_default_str();
  ana->add_option("--seed", seed, "Imputation seed")->capture_default_str();

  // impute
  auto* imp = app.add_subcommand("impute", "Write completed copies of a dataset CSV");
  std::string imp_csv, imp_out = "imputed";
  int imp_n = 15, imp_burn = 100, imp_thin = 25;
  std::uint64_t imp_seed = 20240101;
  std::string imp_adjust;
  bool imp_interaction = false;
  imp->add_option("data", imp_csv, "Dataset CSV")->required();
  imp->add_option("--out", imp_out, "Output directory")->capture_default_str();
  imp->add_option("--imputations", imp_n, "Number of imputations")->capture_default_str();
  imp->add_option("--burn-in", imp_burn, "Burn-in iterations")->capture_default_str();
  imp->add_option("--thin", imp_thin, "Thinning interval")->capture_default_str();
  imp->add_option("--seed", imp_seed, "Chain seed")->capture_default_str();
  imp->add_option("--adjust", imp_adjust,
                  "Imputation-model covariates (default: all columns)");
  imp->add_flag("--interaction", imp_interaction,
                "Interaction in the imputation model");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      return cmd_simulate(plan_path, out_dir, seed_override, reps_override,
                          format_override);
    }
    if (ana->parsed()) {
      return cmd_analyze(csv_path, methods_arg, adjust_arg, interaction, strategy_arg,
                         n_imputations, burn_in, thinning, ci_level, seed);
    }
    if (imp->parsed()) {
      if (imp_thin < 1) {
        throw CrtError(ErrorCode::PlanInfeasible, "--thin must be >= 1");
      }
      return cmd_impute(imp_csv, imp_out, imp_n, imp_burn, imp_thin, imp_seed,
                        imp_adjust, imp_interaction);
    }
  } catch (const CrtError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_input_error(e.code()) ? kExitInputError : kExitRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitOk;
}

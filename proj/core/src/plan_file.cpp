#include "crtmiss/plan_file.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "crtmiss/errors.hpp"

namespace crtmiss {

namespace {

[[noreturn]] void bad(const std::string& source, const std::string& what) {
  throw CrtError(ErrorCode::BadPlanFile, source + ": " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

struct KeyValue {
  std::string value;
  bool used = false;
};

using Section = std::map<std::string, KeyValue>;

class PlanReader {
 public:
  PlanReader(std::map<std::string, Section> sections, std::string source)
      : sections_(std::move(sections)), source_(std::move(source)) {}

  bool has(const std::string& section, const std::string& key) {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get(const std::string& section, const std::string& key) {
    auto& kv = sections_[section][key];
    kv.used = true;
    return kv.value;
  }

  double get_double(const std::string& section, const std::string& key) {
    const std::string v = get(section, key);
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      bad(source_, "[" + section + "] " + key + ": cannot parse '" + v + "' as a number");
    }
  }

  long get_int(const std::string& section, const std::string& key) {
    const std::string v = get(section, key);
    try {
      std::size_t pos = 0;
      const long n = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      bad(source_, "[" + section + "] " + key + ": cannot parse '" + v + "' as an integer");
    }
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key) {
    const std::string v = get(section, key);
    std::uint64_t n = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), n);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
      bad(source_, "[" + section + "] " + key + ": cannot parse '" + v +
                       "' as an unsigned integer");
    }
    return n;
  }

  void check_all_used() const {
    static const std::set<std::string> known_sections = {"scenario", "design", "methods",
                                                         "imputation", "output"};
    for (const auto& [name, section] : sections_) {
      if (!known_sections.count(name)) {
        bad(source_, "unknown section [" + name + "]");
      }
      for (const auto& [key, kv] : section) {
        if (!kv.used) {
          bad(source_, "unknown key '" + key + "' in section [" + name + "]");
        }
      }
    }
  }

  const std::string& source() const { return source_; }

 private:
  std::map<std::string, Section> sections_;
  std::string source_;
};

PlanReader tokenize(std::istream& in, const std::string& source) {
  std::map<std::string, Section> sections;
  std::string line;
  std::string current;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        bad(source, "line " + std::to_string(line_no) + ": malformed section header");
      }
      current = trim(line.substr(1, line.size() - 2));
      sections[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bad(source, "line " + std::to_string(line_no) + ": expected key = value");
    }
    if (current.empty()) {
      bad(source, "line " + std::to_string(line_no) + ": key outside any section");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (sections[current].count(key)) {
      bad(source, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    sections[current][key] = KeyValue{value, false};
  }
  return PlanReader(std::move(sections), source);
}

}  // namespace

LoadedPlan parse_plan_file(std::istream& in, const std::string& source_name) {
  PlanReader reader = tokenize(in, source_name);
  LoadedPlan loaded;
  SimulationPlan& plan = loaded.plan;

  // [scenario]
  if (reader.has("scenario", "name")) {
    plan.scenario_name = reader.get("scenario", "name");
    plan.scenario = builtin_scenario(plan.scenario_name);
  }
  struct ScenarioKey {
    const char* key;
    double ScenarioConfig::*field;
  };
  static const ScenarioKey scenario_keys[] = {
      {"beta0", &ScenarioConfig::beta0},
      {"beta1", &ScenarioConfig::beta1},
      {"beta2_control", &ScenarioConfig::beta2_control},
      {"beta2_treat", &ScenarioConfig::beta2_treat},
      {"sigma_b2", &ScenarioConfig::sigma_b2},
      {"mu_x", &ScenarioConfig::mu_x},
      {"sigma_alpha2", &ScenarioConfig::sigma_alpha2},
      {"sigma_u2", &ScenarioConfig::sigma_u2},
      {"psi_control", &ScenarioConfig::psi_control},
      {"psi_treat", &ScenarioConfig::psi_treat},
      {"phi_control", &ScenarioConfig::phi_control},
      {"phi_treat", &ScenarioConfig::phi_treat},
  };
  for (const auto& sk : scenario_keys) {
    if (reader.has("scenario", sk.key)) {
      plan.scenario.*sk.field = reader.get_double("scenario", sk.key);
      plan.scenario_name.clear();  // the name no longer describes the config
    }
  }
  if (reader.has("scenario", "outcome_link")) {
    const std::string link = reader.get("scenario", "outcome_link");
    if (link == "logit") {
      plan.scenario.outcome_link = Link::Logit;
    } else if (link == "log") {
      plan.scenario.outcome_link = Link::Log;
    } else {
      bad(reader.source(), "[scenario] outcome_link must be logit or log");
    }
  }

  // [design]
  if (reader.has("design", "k_values")) {
    plan.k_values.clear();
    for (const auto& item : split_list(reader.get("design", "k_values"))) {
      plan.k_values.push_back(static_cast<int>(std::stol(item)));
    }
  }
  if (reader.has("design", "m")) plan.m = static_cast<int>(reader.get_int("design", "m"));
  if (reader.has("design", "replications")) {
    plan.replications = static_cast<int>(reader.get_int("design", "replications"));
  }
  if (reader.has("design", "ci_level")) plan.ci_level = reader.get_double("design", "ci_level");
  if (reader.has("design", "master_seed")) plan.master_seed = reader.get_u64("design", "master_seed");
  if (reader.has("design", "truth_replications")) {
    plan.truth_replications = static_cast<int>(reader.get_int("design", "truth_replications"));
  }
  if (reader.has("design", "threads")) {
    plan.threads = static_cast<int>(reader.get_int("design", "threads"));
  }
  struct TruthKey {
    const char* key;
    EffectScale scale;
  };
  static const TruthKey truth_keys[] = {
      {"truth_rd", EffectScale::RiskDifference},
      {"truth_logrr", EffectScale::LogRiskRatio},
      {"truth_logor_conditional", EffectScale::LogOddsConditional},
      {"truth_logor_marginal", EffectScale::LogOddsMarginal},
  };
  for (const auto& tk : truth_keys) {
    if (reader.has("design", tk.key)) {
      plan.truth_overrides[tk.scale] = reader.get_double("design", tk.key);
    }
  }

  // [methods]
  if (reader.has("methods", "methods")) {
    plan.methods.clear();
    for (const auto& item : split_list(reader.get("methods", "methods"))) {
      plan.methods.push_back(method_from_string(item));
    }
  }
  if (reader.has("methods", "strategies")) {
    plan.strategies.clear();
    for (const auto& item : split_list(reader.get("methods", "strategies"))) {
      plan.strategies.push_back(strategy_from_string(item));
    }
  }
  if (reader.has("methods", "interaction")) {
    const std::string v = reader.get("methods", "interaction");
    if (v == "auto") {
      plan.interaction_override.reset();
    } else if (v == "on") {
      plan.interaction_override = true;
    } else if (v == "off") {
      plan.interaction_override = false;
    } else {
      bad(reader.source(), "[methods] interaction must be auto, on, or off");
    }
  }

  // [imputation]
  if (reader.has("imputation", "imputations")) {
    plan.imputation.n_imputations =
        static_cast<int>(reader.get_int("imputation", "imputations"));
  }
  if (reader.has("imputation", "burn_in")) {
    plan.imputation.burn_in = static_cast<int>(reader.get_int("imputation", "burn_in"));
  }
  if (reader.has("imputation", "thinning")) {
    plan.imputation.thinning = static_cast<int>(reader.get_int("imputation", "thinning"));
  }

  // [output]
  if (reader.has("output", "format")) {
    loaded.output.format = reader.get("output", "format");
    if (loaded.output.format != "csv" && loaded.output.format != "markdown" &&
        loaded.output.format != "both") {
      bad(reader.source(), "[output] format must be csv, markdown, or both");
    }
  }
  if (reader.has("output", "write_log")) {
    const std::string v = reader.get("output", "write_log");
    if (v == "true" || v == "1") {
      loaded.output.write_log = true;
    } else if (v == "false" || v == "0") {
      loaded.output.write_log = false;
    } else {
      bad(reader.source(), "[output] write_log must be true or false");
    }
  }

  reader.check_all_used();
  if (plan.methods.empty()) {
    bad(reader.source(), "[methods] methods must list at least one method");
  }
  plan.check();
  return loaded;
}

LoadedPlan read_plan_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw CrtError(ErrorCode::BadPlanFile, "cannot open '" + path + "'");
  }
  return parse_plan_file(in, path);
}

std::string write_resolved_plan(const LoadedPlan& loaded) {
  const SimulationPlan& plan = loaded.plan;
  std::ostringstream out;
  out.precision(17);
  out << "[scenario]\n";
  if (!plan.scenario_name.empty()) out << "name = " << plan.scenario_name << "\n";
  out << "beta0 = " << plan.scenario.beta0 << "\n"
      << "beta1 = " << plan.scenario.beta1 << "\n"
      << "beta2_control = " << plan.scenario.beta2_control << "\n"
      << "beta2_treat = " << plan.scenario.beta2_treat << "\n"
      << "sigma_b2 = " << plan.scenario.sigma_b2 << "\n"
      << "mu_x = " << plan.scenario.mu_x << "\n"
      << "sigma_alpha2 = " << plan.scenario.sigma_alpha2 << "\n"
      << "sigma_u2 = " << plan.scenario.sigma_u2 << "\n"
      << "psi_control = " << plan.scenario.psi_control << "\n"
      << "psi_treat = " << plan.scenario.psi_treat << "\n"
      << "phi_control = " << plan.scenario.phi_control << "\n"
      << "phi_treat = " << plan.scenario.phi_treat << "\n"
      << "outcome_link = " << (plan.scenario.outcome_link == Link::Logit ? "logit" : "log")
      << "\n\n";
  out << "[design]\n";
  out << "k_values = ";
  for (std::size_t i = 0; i < plan.k_values.size(); ++i) {
    out << (i ? "," : "") << plan.k_values[i];
  }
  out << "\n"
      << "m = " << plan.m << "\n"
      << "replications = " << plan.replications << "\n"
      << "ci_level = " << plan.ci_level << "\n"
      << "master_seed = " << plan.master_seed << "\n"
      << "truth_replications = " << plan.truth_replications << "\n"
      << "threads = " << plan.threads << "\n";
  static const std::pair<EffectScale, const char*> truth_keys[] = {
      {EffectScale::RiskDifference, "truth_rd"},
      {EffectScale::LogRiskRatio, "truth_logrr"},
      {EffectScale::LogOddsConditional, "truth_logor_conditional"},
      {EffectScale::LogOddsMarginal, "truth_logor_marginal"},
  };
  for (const auto& [scale, key] : truth_keys) {
    auto it = plan.truth_overrides.find(scale);
    if (it != plan.truth_overrides.end()) {
      out << key << " = " << it->second << "\n";
    }
  }
  out << "\n[methods]\n";
  out << "methods = ";
  for (std::size_t i = 0; i < plan.methods.size(); ++i) {
    out << (i ? "," : "") << to_string(plan.methods[i]);
  }
  out << "\nstrategies = ";
  for (std::size_t i = 0; i < plan.strategies.size(); ++i) {
    out << (i ? "," : "") << to_string(plan.strategies[i]);
  }
  out << "\ninteraction = "
      << (plan.interaction_override ? (*plan.interaction_override ? "on" : "off") : "auto")
      << "\n";
  out << "\n[imputation]\n"
      << "imputations = " << plan.imputation.n_imputations << "\n"
      << "burn_in = " << plan.imputation.burn_in << "\n"
      << "thinning = " << plan.imputation.thinning << "\n";
  out << "\n[output]\n"
      << "format = " << loaded.output.format << "\n"
      << "write_log = " << (loaded.output.write_log ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace crtmiss

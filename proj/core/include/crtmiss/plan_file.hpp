#pragma once

#include <iosfwd>
#include <string>

#include "crtmiss/sim_harness.hpp"

namespace crtmiss {

struct PlanOutput {
  std::string format = "csv";  // csv | markdown | both
  bool write_log = true;
};

struct LoadedPlan {
  SimulationPlan plan;
  PlanOutput output;
};

/// INI-style plan with sections [scenario], [design], [methods], [imputation]
/// and [output]. Unknown sections or keys raise CrtError(BadPlanFile) naming
/// the offender; omitted keys take documented defaults.
LoadedPlan parse_plan_file(std::istream& in, const std::string& source_name);
LoadedPlan read_plan_file(const std::string& path);

/// Echoes a plan with every default materialised; re-reading the echo yields
/// the same plan.
std::string write_resolved_plan(const LoadedPlan& loaded);

}  // namespace crtmiss

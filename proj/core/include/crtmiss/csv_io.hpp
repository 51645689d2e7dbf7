#pragma once

#include <iosfwd>
#include <string>

#include "crtmiss/trial_data.hpp"

namespace crtmiss {

/// Dataset CSV: header "cluster_id,arm,y,<covariate...>", one row per
/// individual, y in {0,1,NA}, covariates as decimal numerals. Rows of a
/// cluster need not be contiguous; clusters keep first-appearance order.
/// Violations raise CrtError(BadDatasetFile) naming the line.
TrialDataset parse_dataset_csv(std::istream& in, const std::string& source_name);
TrialDataset read_dataset_csv(const std::string& path);

/// Writes values with shortest round-trip formatting so read(write(ds)) == ds
/// bitwise.
void write_dataset_csv(const TrialDataset& dataset, std::ostream& out);
void write_dataset_csv_file(const TrialDataset& dataset, const std::string& path);

}  // namespace crtmiss

#include "crtmiss/csv_io.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "crtmiss/errors.hpp"

namespace crtmiss {

namespace {

[[noreturn]] void bad(const std::string& source, long line, const std::string& what) {
  throw CrtError(ErrorCode::BadDatasetFile,
                 source + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(field);
  return fields;
}

double parse_double(const std::string& source, long line, const std::string& text,
                    const std::string& column) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    bad(source, line, "column '" + column + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

TrialDataset parse_dataset_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) {
    bad(source_name, 1, "empty file");
  }
  ++line_no;
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "cluster_id" || header[1] != "arm" ||
      header[2] != "y") {
    bad(source_name, line_no, "header must start with cluster_id,arm,y");
  }

  TrialDataset ds;
  for (std::size_t c = 3; c < header.size(); ++c) {
    if (header[c].empty()) bad(source_name, line_no, "empty covariate name in header");
    ds.covariate_names.push_back(header[c]);
  }
  const std::size_t n_cov = ds.covariate_names.size();

  struct Pending {
    int arm = 0;
    std::vector<std::int8_t> outcomes;
    std::vector<double> covariates;  // row-major
  };
  std::map<std::string, std::size_t> index;
  std::vector<std::string> order;
  std::vector<Pending> pending;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3 + n_cov) {
      bad(source_name, line_no,
          "expected " + std::to_string(3 + n_cov) + " fields, found " +
              std::to_string(fields.size()));
    }
    const std::string& id = fields[0];
    if (id.empty()) bad(source_name, line_no, "empty cluster_id");
    int arm;
    if (fields[1] == "0") {
      arm = 0;
    } else if (fields[1] == "1") {
      arm = 1;
    } else {
      bad(source_name, line_no, "arm must be 0 or 1, found '" + fields[1] + "'");
    }
    std::int8_t y;
    if (fields[2] == "0") {
      y = 0;
    } else if (fields[2] == "1") {
      y = 1;
    } else if (fields[2] == "NA") {
      y = kMissingOutcome;
    } else {
      bad(source_name, line_no, "y must be 0, 1, or NA, found '" + fields[2] + "'");
    }

    auto [it, inserted] = index.try_emplace(id, pending.size());
    if (inserted) {
      pending.emplace_back();
      pending.back().arm = arm;
      order.push_back(id);
    } else if (pending[it->second].arm != arm) {
      bad(source_name, line_no, "cluster '" + id + "' appears in both arms");
    }
    Pending& p = pending[it->second];
    p.outcomes.push_back(y);
    for (std::size_t c = 0; c < n_cov; ++c) {
      if (fields[3 + c] == "NA" || fields[3 + c].empty()) {
        bad(source_name, line_no,
            "covariate '" + ds.covariate_names[c] + "' is missing (NA is allowed in y only)");
      }
      p.covariates.push_back(
          parse_double(source_name, line_no, fields[3 + c], ds.covariate_names[c]));
    }
  }
  if (pending.empty()) bad(source_name, line_no, "no data rows");

  for (std::size_t j = 0; j < order.size(); ++j) {
    const Pending& p = pending[j];
    ClusterRecord cluster;
    cluster.cluster_id = order[j];
    cluster.arm = p.arm;
    cluster.outcomes = p.outcomes;
    const int n = static_cast<int>(p.outcomes.size());
    cluster.covariates.resize(n, static_cast<Eigen::Index>(n_cov));
    for (int l = 0; l < n; ++l) {
      for (std::size_t c = 0; c < n_cov; ++c) {
        cluster.covariates(l, static_cast<Eigen::Index>(c)) =
            p.covariates[l * n_cov + c];
      }
    }
    ds.clusters.push_back(std::move(cluster));
  }
  return validate(ds);
}

TrialDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw CrtError(ErrorCode::BadDatasetFile, "cannot open '" + path + "'");
  }
  return parse_dataset_csv(in, path);
}

void write_dataset_csv(const TrialDataset& dataset, std::ostream& out) {
  out << "cluster_id,arm,y";
  for (const auto& name : dataset.covariate_names) out << "," << name;
  out << "\n";
  for (const auto& cluster : dataset.clusters) {
    for (int l = 0; l < cluster.size(); ++l) {
      out << cluster.cluster_id << "," << cluster.arm << ",";
      if (cluster.outcomes[l] == kMissingOutcome) {
        out << "NA";
      } else {
        out << static_cast<int>(cluster.outcomes[l]);
      }
      for (Eigen::Index c = 0; c < cluster.covariates.cols(); ++c) {
        out << "," << format_double(cluster.covariates(l, c));
      }
      out << "\n";
    }
  }
}

void write_dataset_csv_file(const TrialDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw CrtError(ErrorCode::BadDatasetFile, "cannot write '" + path + "'");
  }
  write_dataset_csv(dataset, out);
}

}  // namespace crtmiss

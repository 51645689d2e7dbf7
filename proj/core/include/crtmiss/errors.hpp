#pragma once

#include <stdexcept>
#include <string>

namespace crtmiss {

enum class ErrorCode {
  // dataset validation
  EmptyArm,
  NonBinaryOutcome,
  MissingCovariate,
  // generation
  UnknownScenario,
  ProbabilityOverflow,
  // regression fitting
  RankDeficient,
  Separation,
  NoConvergence,
  // cluster-level analysis
  TooFewClusters,
  EmptyArmAfterDrop,
  ZeroMeanProportion,
  ZeroPrediction,
  ZeroMeanResidual,
  NonPositiveDf,
  // imputation
  SamplerDivergence,
  TooManyImputationFailures,
  // harness / io
  PlanInfeasible,
  BadPlanFile,
  BadDatasetFile,
};

/// Library-wide exception: an error code plus a human-readable message that
/// names the offending cluster, individual, key, or cell.
class CrtError : public std::runtime_error {
 public:
  CrtError(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace crtmiss

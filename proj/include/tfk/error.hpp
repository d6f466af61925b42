#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tfk {

enum class ErrorCode {
  InvalidSpec,
  ShapeMismatch,
  UnstableTimestep,
  InvalidClock,
  InvalidParams,
  SeedOutsideBrain,
  EmptyTarget,
  EmptySearchGrid,
  EmptyBatch,
  EmptyDataset,
  InvalidInterval,
  ConcentrationOutOfRange,
  PlanInvalid,
  ModelConditioningMismatch,
  EmptyMask,
  GridTooSmall,
  TooFewTimePoints,
  MissingSidecar,
  SizeMismatch,
  UnknownDtype,
  UnsupportedDatatype,
  BadMagic,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tfk

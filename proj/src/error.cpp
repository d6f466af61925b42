#include "tfk/error.hpp"

namespace tfk {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnstableTimestep: return "UnstableTimestep";
    case ErrorCode::InvalidClock: return "InvalidClock";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::SeedOutsideBrain: return "SeedOutsideBrain";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::EmptySearchGrid: return "EmptySearchGrid";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InvalidInterval: return "InvalidInterval";
    case ErrorCode::ConcentrationOutOfRange: return "ConcentrationOutOfRange";
    case ErrorCode::PlanInvalid: return "PlanInvalid";
    case ErrorCode::ModelConditioningMismatch: return "ModelConditioningMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::GridTooSmall: return "GridTooSmall";
    case ErrorCode::TooFewTimePoints: return "TooFewTimePoints";
    case ErrorCode::MissingSidecar: return "MissingSidecar";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::UnknownDtype: return "UnknownDtype";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace tfk

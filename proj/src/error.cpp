#include "gsdeform/error.hpp"

namespace gsdeform {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kDegenerateConfiguration: return "degenerate-configuration";
    case ErrorCode::kNoConsensus: return "no-consensus";
    case ErrorCode::kNoOverlap: return "no-overlap";
    case ErrorCode::kNoCorrespondence: return "no-correspondence";
    case ErrorCode::kDegenerateBlend: return "degenerate-blend";
    case ErrorCode::kNumericalFailure: return "numerical-failure";
    case ErrorCode::kSchema: return "schema";
    case ErrorCode::kData: return "data";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kBusy: return "busy";
    case ErrorCode::kTopologyMismatch: return "topology-mismatch";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace gsdeform

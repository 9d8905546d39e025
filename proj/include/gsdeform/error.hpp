#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gsdeform {

enum class ErrorCode {
  kInvalidInput,
  kBehindCamera,
  kInsufficientData,
  kDegenerateConfiguration,
  kNoConsensus,
  kNoOverlap,
  kNoCorrespondence,
  kDegenerateBlend,
  kNumericalFailure,
  kSchema,
  kData,
  kNotFound,
  kBusy,
  kTopologyMismatch,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every pipeline failure is reported through this type; `code()` is stable
// and is what the CLI and the service serialize.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gsdeform

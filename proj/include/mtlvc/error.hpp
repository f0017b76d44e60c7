#pragma once

#include <stdexcept>
#include <string>

namespace mtlvc {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kAllSilent,
  kTooShort,
  kOutOfRange,
  kUnknownSymbol,
  kInvalidStyle,
  kBothPresent,
  kNeitherPresent,
  kEmptyInput,
  kCorpusTooSmall,
  kNonFiniteLoss,
  kEmptyReference,
  kFormat,
  kIo,
};

const char* ErrorCodeName(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kAllSilent: return "AllSilent";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kUnknownSymbol: return "UnknownSymbol";
    case ErrorCode::kInvalidStyle: return "InvalidStyle";
    case ErrorCode::kBothPresent: return "BothPresent";
    case ErrorCode::kNeitherPresent: return "NeitherPresent";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kCorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kEmptyReference: return "EmptyReference";
    case ErrorCode::kFormat: return "Format";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace mtlvc

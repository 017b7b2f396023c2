#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace handocc {

/// Failure categories. The CLI prints `error: <category>: <message>` so the
/// category string is part of the external interface.
enum class ErrorCode {
  InvalidArgument,
  BehindCamera,
  EmptyMask,
  HullTooSmall,
  NeedTwoViews,
  PredictorFailure,
  EmptyField,
  Diverged,
  Io,
  Config,
  Format,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::BehindCamera: return "behind_camera";
    case ErrorCode::EmptyMask: return "empty_mask";
    case ErrorCode::HullTooSmall: return "hull_too_small";
    case ErrorCode::NeedTwoViews: return "need_two_views";
    case ErrorCode::PredictorFailure: return "predictor_failure";
    case ErrorCode::EmptyField: return "empty_field";
    case ErrorCode::Diverged: return "diverged";
    case ErrorCode::Io: return "io";
    case ErrorCode::Config: return "config";
    case ErrorCode::Format: return "format";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorCode::InvalidArgument, message);
}

}  // namespace handocc

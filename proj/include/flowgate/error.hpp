#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowgate {

enum class ErrorCode {
  UnrecognizedMagic,
  TruncatedRecord,
  TooShort,
  NotIPv4,
  HeaderTruncated,
  BadIHL,
  IoFailure,
  MalformedRow,
  ShapeMismatch,
  DetachedLoss,
  NonFiniteInput,
  NonFiniteIntermediate,
  EmptyDataset,
  AnomalyInTrainingSet,
  NegativeSigma,
  EmptyInput,
  EmptyClass,
  BadThreshold,
  OneClassOnly,
  CheckpointMismatch,
  BadCheckpoint,
  BadConfig,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Wraps an error raised inside a pipeline stage with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& inner)
      : Error(inner.code(), "[" + stage + "] " + inner.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace flowgate

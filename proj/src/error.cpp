#include "flowgate/error.hpp"

namespace flowgate {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnrecognizedMagic: return "UnrecognizedMagic";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NotIPv4: return "NotIPv4";
    case ErrorCode::HeaderTruncated: return "HeaderTruncated";
    case ErrorCode::BadIHL: return "BadIHL";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DetachedLoss: return "DetachedLoss";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonFiniteIntermediate: return "NonFiniteIntermediate";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::AnomalyInTrainingSet: return "AnomalyInTrainingSet";
    case ErrorCode::NegativeSigma: return "NegativeSigma";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::BadThreshold: return "BadThreshold";
    case ErrorCode::OneClassOnly: return "OneClassOnly";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

}  // namespace flowgate

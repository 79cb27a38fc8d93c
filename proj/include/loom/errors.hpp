#pragma once

#include <stdexcept>
#include <string>

namespace loom {

enum class ErrorCode {
  MalformedDocument,
  MissingGoal,
  InvalidBudget,
  InvalidConstraint,
  InvalidResource,
  DuplicateResourceId,
  DuplicateId,
  MissingSchema,
  CyclicGraph,
  CyclicReference,
  EmptyGraph,
  PatchOutOfLocality,
  PatchYieldsInvalidGraph,
  UnmappableSchemas,
  NoExecutableTopology,
  BuildExhausted,
  UnbuiltSandbox,
  UnresolvedExecutor,
  ProtocolViolation,
  NegativeCost,
  EmptyReference,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::MissingGoal: return "MissingGoal";
    case ErrorCode::InvalidBudget: return "InvalidBudget";
    case ErrorCode::InvalidConstraint: return "InvalidConstraint";
    case ErrorCode::InvalidResource: return "InvalidResource";
    case ErrorCode::DuplicateResourceId: return "DuplicateResourceId";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::MissingSchema: return "MissingSchema";
    case ErrorCode::CyclicGraph: return "CyclicGraph";
    case ErrorCode::CyclicReference: return "CyclicReference";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::PatchOutOfLocality: return "PatchOutOfLocality";
    case ErrorCode::PatchYieldsInvalidGraph: return "PatchYieldsInvalidGraph";
    case ErrorCode::UnmappableSchemas: return "UnmappableSchemas";
    case ErrorCode::NoExecutableTopology: return "NoExecutableTopology";
    case ErrorCode::BuildExhausted: return "BuildExhausted";
    case ErrorCode::UnbuiltSandbox: return "UnbuiltSandbox";
    case ErrorCode::UnresolvedExecutor: return "UnresolvedExecutor";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::NegativeCost: return "NegativeCost";
    case ErrorCode::EmptyReference: return "EmptyReference";
  }
  return "UnknownError";
}

/// Engine-wide exception. `code()` is the stable machine-readable identity;
/// the message carries context for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace loom

#include "p2p/errors.hpp"

namespace p2p {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NonBipartiteEdge: return "NonBipartiteEdge";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::WeightOnNonEdge: return "WeightOnNonEdge";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::InvalidProsumer: return "InvalidProsumer";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::NoRoot: return "NoRoot";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::InteriorAssumptionFails: return "InteriorAssumptionFails";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::NoKktPoint: return "NoKktPoint";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::InnerDivergence: return "InnerDivergence";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::EmptyFeasibleInterval: return "EmptyFeasibleInterval";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

}  // namespace p2p

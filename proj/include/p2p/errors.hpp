#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace p2p {

enum class ErrorCode {
  // market model
  DuplicateId,
  NonBipartiteEdge,
  DanglingEdge,
  WeightOnNonEdge,
  MissingPair,
  InvalidProsumer,
  // analytic clearing
  EmptySet,
  NoRoot,
  RankDeficient,
  InteriorAssumptionFails,
  TooLarge,
  NoKktPoint,
  // admm / decentralized
  InvalidConfig,
  NonFiniteInput,
  SingularSystem,
  InnerDivergence,
  ProtocolViolation,
  // scenario
  ParseError,
  ValidationError,
  RangeError,
  EmptyFeasibleInterval,
  InvariantViolation,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; `code()` identifies the failure.
class MarketError : public std::runtime_error {
 public:
  MarketError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace p2p

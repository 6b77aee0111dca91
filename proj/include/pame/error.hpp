#pragma once

// Error taxonomy for the simulator. Every throwing path uses pame::Error with
// a stable code so callers (CLI, tests) can branch on the failure class
// instead of string-matching messages.

#include <stdexcept>
#include <string>

namespace pame {

enum class ErrorCode {
  InvalidDimension,          // bad m/n/degree parity or size
  NotConnected,              // graph generation exhausted retries disconnected
  BipartiteOrDisconnected,   // spectral gap >= 1: mixing impossible
  NotSymmetric,              // matrix fed to spectral_gap is not symmetric
  NotStochastic,             // row/column sums of B are not 1
  InvalidSize,               // s outside [1, n] and similar range violations
  DimensionMismatch,         // vectors of inconsistent length
  DuplicateSender,           // two messages from the same sender in one round
  EmptyBatch,                // gradient requested on an empty index set
  NonFiniteValue,            // NaN/Inf encountered in state or input
  EncodingRange,             // value not representable in the wire format
  InvalidTopology,           // engine started on an unusable graph (e.g. m=1)
  TooFewPoints,              // not enough usable points for a rate fit
  ConfigError,               // malformed config / unknown key / bad override
  UnknownOracle,             // CLI oracle subcommand got an unknown name
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidDimension: return "InvalidDimension";
    case ErrorCode::NotConnected: return "NotConnected";
    case ErrorCode::BipartiteOrDisconnected: return "BipartiteOrDisconnected";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::NotStochastic: return "NotStochastic";
    case ErrorCode::InvalidSize: return "InvalidSize";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateSender: return "DuplicateSender";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EncodingRange: return "EncodingRange";
    case ErrorCode::InvalidTopology: return "InvalidTopology";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::UnknownOracle: return "UnknownOracle";
  }
  return "UnknownError";
}

}  // namespace pame

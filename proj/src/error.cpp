#include "meshsplat/error.hpp"

namespace meshsplat {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::IndexOutOfRange: return "index out of range";
    case ErrorCode::Configuration: return "configuration error";
    case ErrorCode::DegenerateBone: return "degenerate bone";
    case ErrorCode::Unfillable: return "unfillable gap";
    case ErrorCode::Precondition: return "precondition violated";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::Diverged: return "diverged";
    case ErrorCode::ContractViolation: return "contract violation";
    case ErrorCode::Format: return "format error";
    case ErrorCode::Io: return "i/o error";
  }
  return "unknown error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace meshsplat

#include "pdjournal/errors.hpp"

namespace pdj {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::UnknownPatient: return "UnknownPatient";
    case Errc::UnknownSession: return "UnknownSession";
    case Errc::SessionClosed: return "SessionClosed";
    case Errc::ConcurrentTurn: return "ConcurrentTurn";
    case Errc::StorageError: return "StorageError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::BudgetExceeded: return "BudgetExceeded";
    case Errc::ProviderUnavailable: return "ProviderUnavailable";
    case Errc::UnparseableLabel: return "UnparseableLabel";
    case Errc::Timeout: return "Timeout";
    case Errc::ProviderError: return "ProviderError";
    case Errc::RedactionViolation: return "RedactionViolation";
    case Errc::AlignmentError: return "AlignmentError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what, int status)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), status_(status) {}

}  // namespace pdj

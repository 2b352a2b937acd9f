#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pdj {

enum class Errc {
  UnknownPatient,
  UnknownSession,
  SessionClosed,
  ConcurrentTurn,
  StorageError,
  ConfigError,
  BudgetExceeded,
  ProviderUnavailable,
  UnparseableLabel,
  Timeout,
  ProviderError,
  RedactionViolation,
  AlignmentError,
  InvalidArgument,
};

std::string_view errc_name(Errc code);

// Single exception type for the whole library; callers branch on code().
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what, int status = 0);

  Errc code() const noexcept { return code_; }
  // HTTP status for ProviderError, 0 otherwise.
  int status() const noexcept { return status_; }

private:
  Errc code_;
  int status_;
};

}  // namespace pdj

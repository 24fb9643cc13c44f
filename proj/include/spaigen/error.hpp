#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spaigen {

/// Coarse failure classes; the CLI prints the category as a stable token.
enum class ErrorCategory {
  invalid_input,
  dimension_mismatch,
  numerical_failure,
  not_converged,
  io_error,
  config_error,
};

std::string_view category_name(ErrorCategory c) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

inline std::string_view category_name(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::invalid_input: return "invalid_input";
    case ErrorCategory::dimension_mismatch: return "dimension_mismatch";
    case ErrorCategory::numerical_failure: return "numerical_failure";
    case ErrorCategory::not_converged: return "not_converged";
    case ErrorCategory::io_error: return "io_error";
    case ErrorCategory::config_error: return "config_error";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorCategory c, const std::string& what) {
  throw Error(c, what);
}

}  // namespace spaigen

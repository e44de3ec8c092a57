#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segx {

/// Coarse failure category. The CLI maps each category to its own exit code.
enum class ErrorKind {
  Argument,
  Shape,
  Io,
  Format,
  Corruption,
  Config,
  Numeric,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace segx

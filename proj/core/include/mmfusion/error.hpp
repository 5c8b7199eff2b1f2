#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmfusion {

enum class ErrorKind {
  dimension,
  configuration,
  format,
  corruption,
  io,
  usage,
  lookup,
};

constexpr std::string_view category_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension_error";
    case ErrorKind::configuration: return "config_error";
    case ErrorKind::format: return "format_error";
    case ErrorKind::corruption: return "corruption_error";
    case ErrorKind::io: return "io_error";
    case ErrorKind::usage: return "usage_error";
    case ErrorKind::lookup: return "lookup_error";
  }
  return "error";
}

// Every failure raised by the library carries a kind; the CLI prints it as a
// machine-parsable prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view category() const noexcept { return category_name(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mmfusion

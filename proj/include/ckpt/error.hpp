#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ckpt {

enum class ErrorKind {
  Syntax,
  UnresolvedLabel,
  DuplicateLabel,
  RecursionDetected,
  MissingPrologue,
  InvalidFrame,
  InvalidTermination,
  OffsetOutOfFrame,
  InvalidLoop,
  MissingEntry,
  AnnotationMissing,
  StackOverflow,
  StackUnderflow,
  InvalidAddress,
  MachineHalted,
  NvmOverflow,
  CorruptRecord,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. Parse errors carry a 1-based
/// source position; other kinds leave line/column at zero.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::size_t line = 0, std::size_t column = 0);

  ErrorKind kind() const noexcept { return kind_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  ErrorKind kind_;
  std::size_t line_;
  std::size_t column_;
};

}  // namespace ckpt

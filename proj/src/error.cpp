#include "ckpt/error.hpp"

namespace ckpt {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Syntax: return "SyntaxError";
    case ErrorKind::UnresolvedLabel: return "UnresolvedLabel";
    case ErrorKind::DuplicateLabel: return "DuplicateLabel";
    case ErrorKind::RecursionDetected: return "RecursionDetected";
    case ErrorKind::MissingPrologue: return "MissingPrologue";
    case ErrorKind::InvalidFrame: return "InvalidFrame";
    case ErrorKind::InvalidTermination: return "InvalidTermination";
    case ErrorKind::OffsetOutOfFrame: return "OffsetOutOfFrame";
    case ErrorKind::InvalidLoop: return "InvalidLoop";
    case ErrorKind::MissingEntry: return "MissingEntry";
    case ErrorKind::AnnotationMissing: return "AnnotationMissing";
    case ErrorKind::StackOverflow: return "StackOverflow";
    case ErrorKind::StackUnderflow: return "StackUnderflow";
    case ErrorKind::InvalidAddress: return "InvalidAddress";
    case ErrorKind::MachineHalted: return "MachineHalted";
    case ErrorKind::NvmOverflow: return "NvmOverflow";
    case ErrorKind::CorruptRecord: return "CorruptRecord";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

namespace {
std::string decorate(ErrorKind kind, const std::string& what, std::size_t line, std::size_t column) {
  std::string msg{to_string(kind)};
  if (line != 0) {
    msg += " at " + std::to_string(line) + ":" + std::to_string(column);
  }
  msg += ": " + what;
  return msg;
}
}  // namespace

Error::Error(ErrorKind kind, const std::string& what, std::size_t line, std::size_t column)
    : std::runtime_error(decorate(kind, what, line, column)), kind_(kind), line_(line), column_(column) {}

}  // namespace ckpt

#include "polypforge/error.hpp"

namespace polypforge {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::missing_file: return "missing_file";
    case ErrorKind::malformed_line: return "malformed_line";
    case ErrorKind::unknown_label: return "unknown_label";
    case ErrorKind::dangling_reference: return "dangling_reference";
    case ErrorKind::split_underflow: return "split_underflow";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::size_mismatch: return "size_mismatch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::spec_validation: return "spec_validation";
    case ErrorKind::unknown_class: return "unknown_class";
    case ErrorKind::leakage: return "leakage";
    case ErrorKind::unknown_session: return "unknown_session";
    case ErrorKind::unknown_item: return "unknown_item";
    case ErrorKind::duplicate_label: return "duplicate_label";
    case ErrorKind::ordering: return "ordering";
    case ErrorKind::incomplete_session: return "incomplete_session";
    case ErrorKind::insufficient_pool: return "insufficient_pool";
    case ErrorKind::degenerate_null: return "degenerate_null";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
  }
  return "unknown";
}

}  // namespace polypforge

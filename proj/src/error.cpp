#include "qkdnet/error.hpp"

#include <fmt/format.h>

namespace qkdnet {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::parse_error: return "parse_error";
    case Errc::dangling_reference: return "dangling_reference";
    case Errc::invariant_violation: return "invariant_violation";
    case Errc::unknown_entity: return "unknown_entity";
    case Errc::empty_path: return "empty_path";
    case Errc::no_path: return "no_path";
    case Errc::loss_exceeded: return "loss_exceeded";
    case Errc::no_channel: return "no_channel";
    case Errc::inactive_link: return "inactive_link";
    case Errc::unsupported_mode: return "unsupported_mode";
    case Errc::foreign_block: return "foreign_block";
    case Errc::duplicate_block: return "duplicate_block";
    case Errc::insufficient_key: return "insufficient_key";
    case Errc::empty_pool: return "empty_pool";
    case Errc::zero_length: return "zero_length";
    case Errc::length_mismatch: return "length_mismatch";
    case Errc::reused_key: return "reused_key";
    case Errc::auth_failure: return "auth_failure";
    case Errc::duplicate_stream: return "duplicate_stream";
    case Errc::unknown_node: return "unknown_node";
    case Errc::duplicate_registration: return "duplicate_registration";
    case Errc::no_feasible_path: return "no_feasible_path";
    case Errc::admission_rejected: return "admission_rejected";
    case Errc::configuration_failed: return "configuration_failed";
    case Errc::unknown_session: return "unknown_session";
    case Errc::session_closed: return "session_closed";
    case Errc::unknown_identity: return "unknown_identity";
    case Errc::unknown_key_id: return "unknown_key_id";
    case Errc::key_already_retrieved: return "key_already_retrieved";
    case Errc::key_size_exceeded: return "key_size_exceeded";
    case Errc::insufficient_key_timeout: return "insufficient_key_timeout";
    case Errc::out_of_window: return "out_of_window";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::no_trace: return "no_trace";
    case Errc::io_error: return "io_error";
  }
  return "unknown";
}

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& what)
    : Error(Errc::parse_error, fmt::format("{}:{}: {}", line, column, what)),
      line_(line),
      column_(column) {}

}  // namespace qkdnet

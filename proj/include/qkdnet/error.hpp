#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qkdnet {

enum class Errc {
  parse_error,
  dangling_reference,
  invariant_violation,
  unknown_entity,
  empty_path,
  no_path,
  loss_exceeded,
  no_channel,
  inactive_link,
  unsupported_mode,
  foreign_block,
  duplicate_block,
  insufficient_key,
  empty_pool,
  zero_length,
  length_mismatch,
  reused_key,
  auth_failure,
  duplicate_stream,
  unknown_node,
  duplicate_registration,
  no_feasible_path,
  admission_rejected,
  configuration_failed,
  unknown_session,
  session_closed,
  unknown_identity,
  unknown_key_id,
  key_already_retrieved,
  key_size_exceeded,
  insufficient_key_timeout,
  out_of_window,
  invalid_argument,
  no_trace,
  io_error,
};

std::string_view to_string(Errc code);

// Every failure surfaced by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Parse failures keep their position so callers can point at the offending text.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace qkdnet

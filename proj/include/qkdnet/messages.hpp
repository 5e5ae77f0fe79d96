#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "qkdnet/keystream.hpp"

namespace qkdnet::control {

enum class MsgKind : std::uint8_t { REGISTER = 1, CONFIG_HOP = 2, POOL_REPORT = 3, SESSION_CMD = 4, ALARM = 5 };

std::string_view to_string(MsgKind kind);

// Controller-agent message. The body is canonical key:value text: header
// fields id/from/to first, then `fields` in key order.
struct Message {
  std::uint64_t id = 0;
  MsgKind kind = MsgKind::REGISTER;
  std::string from;
  std::string to;
  std::map<std::string, std::string> fields;

  const std::string& at(const std::string& key) const;
  bool operator==(const Message&) const = default;
};

std::string encode_body(const Message& msg);
Message decode_body(MsgKind kind, std::string_view body);

// u32 LE length of (kind byte + body), kind byte, body.
Bytes encode_record(const Message& msg);
Message decode_record(std::span<const std::uint8_t> data, std::size_t* consumed = nullptr);
std::vector<Message> read_trace(std::span<const std::uint8_t> data);

// In-process transport. Deliveries are queued and drained in FIFO order, so
// handlers may send from inside a handler. Every sent message is appended to
// the trace stream when one is set.
class MessageBus {
 public:
  using Handler = std::function<void(const Message&)>;

  void attach(const std::string& address, Handler handler);
  void detach(const std::string& address);
  std::uint64_t send(MsgKind kind, const std::string& from, const std::string& to,
                     std::map<std::string, std::string> fields);
  // Delivers every queued message; returns how many were delivered.
  std::size_t pump();

  void set_trace(std::ostream* out) { trace_ = out; }
  // At-least-once simulation: every n-th message is delivered twice.
  void set_duplicate_every(std::size_t n) { duplicate_every_ = n; }
  std::uint64_t sent() const { return next_id_ - 1; }

 private:
  std::map<std::string, Handler> handlers_;
  std::vector<Message> queue_;
  std::size_t head_ = 0;
  std::uint64_t next_id_ = 1;
  std::ostream* trace_ = nullptr;
  std::size_t duplicate_every_ = 0;
  bool pumping_ = false;
};

}  // namespace qkdnet::control

#include "qkdnet/messages.hpp"

#include <fmt/format.h>

#include "qkdnet/error.hpp"

namespace qkdnet::control {

std::string_view to_string(MsgKind kind) {
  switch (kind) {
    case MsgKind::REGISTER: return "REGISTER";
    case MsgKind::CONFIG_HOP: return "CONFIG_HOP";
    case MsgKind::POOL_REPORT: return "POOL_REPORT";
    case MsgKind::SESSION_CMD: return "SESSION_CMD";
    case MsgKind::ALARM: return "ALARM";
  }
  return "?";
}

const std::string& Message::at(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) {
    throw Error(Errc::invalid_argument, fmt::format("{} message {} lacks field '{}'", to_string(kind), id, key));
  }
  return it->second;
}

namespace {

// Values are single-line; backslash and newline are escaped.
std::string escape(std::string_view v) {
  std::string out;
  for (char c : v) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == '\\' && i + 1 < v.size()) {
      out.push_back(v[i + 1] == 'n' ? '\n' : v[i + 1]);
      ++i;
    } else {
      out.push_back(v[i]);
    }
  }
  return out;
}

}  // namespace

std::string encode_body(const Message& msg) {
  std::string out = fmt::format("id:{}\nfrom:{}\nto:{}\n", msg.id, escape(msg.from), escape(msg.to));
  for (const auto& [k, v] : msg.fields) out += fmt::format("{}:{}\n", k, escape(v));
  return out;
}

Message decode_body(MsgKind kind, std::string_view body) {
  Message msg;
  msg.kind = kind;
  std::size_t pos = 0;
  int header = 0;
  while (pos < body.size()) {
    std::size_t nl = body.find('\n', pos);
    if (nl == std::string_view::npos) nl = body.size();
    const std::string_view line = body.substr(pos, nl - pos);
    pos = nl + 1;
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) throw Error(Errc::parse_error, "message line without ':'");
    const std::string key(line.substr(0, colon));
    std::string value = unescape(line.substr(colon + 1));
    if (header == 0 && key == "id") {
      msg.id = std::stoull(value);
      ++header;
    } else if (header == 1 && key == "from") {
      msg.from = std::move(value);
      ++header;
    } else if (header == 2 && key == "to") {
      msg.to = std::move(value);
      ++header;
    } else {
      msg.fields[key] = std::move(value);
    }
  }
  if (header != 3) throw Error(Errc::parse_error, "message header incomplete");
  return msg;
}

Bytes encode_record(const Message& msg) {
  const std::string body = encode_body(msg);
  const std::uint32_t len = static_cast<std::uint32_t>(body.size() + 1);
  Bytes out;
  out.reserve(4 + len);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.push_back(static_cast<std::uint8_t>(msg.kind));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

Message decode_record(std::span<const std::uint8_t> data, std::size_t* consumed) {
  if (data.size() < 5) throw Error(Errc::parse_error, "truncated message record");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t{data[static_cast<std::size_t>(i)]} << (8 * i);
  if (len < 1 || data.size() < 4 + std::size_t{len}) throw Error(Errc::parse_error, "truncated message record");
  const auto kind = static_cast<MsgKind>(data[4]);
  if (data[4] < 1 || data[4] > 5) throw Error(Errc::parse_error, fmt::format("unknown message kind {}", data[4]));
  const std::string_view body(reinterpret_cast<const char*>(data.data() + 5), len - 1);
  if (consumed) *consumed = 4 + len;
  return decode_body(kind, body);
}

std::vector<Message> read_trace(std::span<const std::uint8_t> data) {
  std::vector<Message> out;
  std::size_t pos = 0;
  while (pos < data.size()) {
    std::size_t used = 0;
    out.push_back(decode_record(data.subspan(pos), &used));
    pos += used;
  }
  return out;
}

void MessageBus::attach(const std::string& address, Handler handler) { handlers_[address] = std::move(handler); }

void MessageBus::detach(const std::string& address) { handlers_.erase(address); }

std::uint64_t MessageBus::send(MsgKind kind, const std::string& from, const std::string& to,
                               std::map<std::string, std::string> fields) {
  Message msg{next_id_++, kind, from, to, std::move(fields)};
  if (trace_) {
    const Bytes rec = encode_record(msg);
    trace_->write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  const bool twice = duplicate_every_ > 0 && msg.id % duplicate_every_ == 0;
  queue_.push_back(msg);
  if (twice) queue_.push_back(std::move(msg));
  return next_id_ - 1;
}

std::size_t MessageBus::pump() {
  if (pumping_) return 0;
  pumping_ = true;
  std::size_t n = 0;
  try {
    while (head_ < queue_.size()) {
      const Message msg = queue_[head_++];
      auto it = handlers_.find(msg.to);
      if (it != handlers_.end()) {
        it->second(msg);
        ++n;
      }
    }
  } catch (...) {
    queue_.clear();
    head_ = 0;
    pumping_ = false;
    throw;
  }
  queue_.clear();
  head_ = 0;
  pumping_ = false;
  return n;
}

}  // namespace qkdnet::control

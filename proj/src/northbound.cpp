#include "qkdnet/northbound.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "httplib.h"
#include "json.hpp"

namespace qkdnet::northbound {

using control::QoS;
using json = nlohmann::ordered_json;

int http_status(Errc code) {
  switch (code) {
    case Errc::unknown_identity:
    case Errc::unknown_key_id:
    case Errc::unknown_session: return 404;
    case Errc::key_already_retrieved:
    case Errc::session_closed: return 409;
    case Errc::insufficient_key_timeout:
    case Errc::no_feasible_path:
    case Errc::admission_rejected:
    case Errc::configuration_failed: return 503;
    default: return 400;
  }
}

KeyService::KeyService(sim::Simulation& sim, ServiceConfig config, bool live)
    : sim_(sim), config_(config), live_(live), key_ids_(config.seed, "key_ID") {
  if (config_.key_size == 0 || config_.max_key_size < config_.key_size) {
    throw Error(Errc::invalid_argument, "key size must be positive and at most max_key_size");
  }
}

const netmodel::Application& KeyService::identity(const std::string& app) const {
  const auto* a = sim_.model().find_app(app);
  if (!a) throw Error(Errc::unknown_identity, fmt::format("unknown SAE '{}'", app));
  return *a;
}

sim::SessionBuffer& KeyService::pair_buffer(const std::string& master, const std::string& slave) {
  if (master == slave) throw Error(Errc::invalid_argument, "master and slave SAE must differ");
  auto it = pairs_.find({master, slave});
  if (it != pairs_.end()) {
    if (auto* buf = sim_.buffer(it->second)) return *buf;
  }
  // Implicit session, opened on first touch and reopened after a failure.
  QoS q = config_.default_qos;
  q.key_chunk_size = config_.key_size;
  const Id128 id = sim_.open(master, slave, q);
  pairs_[{master, slave}] = id;
  return *sim_.buffer(id);
}

bool KeyService::wait(std::unique_lock<std::mutex>& lock, int timeout_ms, const std::function<bool()>& ready) {
  if (ready()) return true;
  if (live_) return sim_.ticked().wait_for(lock, std::chrono::milliseconds(timeout_ms), ready);
  const auto ticks = static_cast<std::uint64_t>(std::ceil(timeout_ms / 1000.0 / sim_.tick_s() - 1e-9));
  for (std::uint64_t i = 0; i < ticks && !ready(); ++i) sim_.advance();
  return ready();
}

KeyStatus KeyService::status(const std::string& master, const std::string& slave) {
  std::unique_lock lock(sim_.mutex());
  const auto& m = identity(master);
  const auto& s = identity(slave);
  auto& buf = pair_buffer(master, slave);
  return KeyStatus{m.node,
                   s.node,
                   master,
                   slave,
                   config_.key_size,
                   buf.chunks.size(),
                   config_.max_key_count,
                   config_.max_key_per_request,
                   config_.max_key_size,
                   1};
}

std::vector<DeliveredKey> KeyService::enc_keys(const std::string& master, const std::string& slave,
                                               std::size_t number, std::optional<std::size_t> size_bytes) {
  std::unique_lock lock(sim_.mutex());
  identity(master);
  identity(slave);
  if (number == 0) throw Error(Errc::invalid_argument, "number must be at least 1");
  if (number > config_.max_key_per_request) {
    throw Error(Errc::invalid_argument,
                fmt::format("number {} exceeds max_key_per_request {}", number, config_.max_key_per_request));
  }
  const std::size_t size = size_bytes.value_or(config_.key_size);
  if (size == 0) throw Error(Errc::invalid_argument, "size must be positive");
  if (size > config_.max_key_size) {
    throw Error(Errc::key_size_exceeded, fmt::format("size {} exceeds max_key_size {}", size, config_.max_key_size));
  }
  const std::size_t per_key = (size + config_.key_size - 1) / config_.key_size;
  const std::size_t need = number * per_key;
  pair_buffer(master, slave);
  const Id128 session = pairs_.at({master, slave});
  auto stored = [&]() -> std::size_t {
    auto* b = sim_.buffer(session);
    return b ? b->chunks.size() : 0;
  };
  if (!wait(lock, config_.timeout_ms, [&] { return stored() >= need; })) {
    throw Error(Errc::insufficient_key_timeout,
                fmt::format("insufficient key: stored {} chunks, requested {}", stored(), need));
  }
  auto& buf = *sim_.buffer(session);
  std::vector<DeliveredKey> out;
  for (std::size_t k = 0; k < number; ++k) {
    Bytes mine;
    Bytes theirs;
    for (std::size_t c = 0; c < per_key; ++c) {
      auto& chunk = buf.chunks.front();
      mine.insert(mine.end(), chunk.at_src.begin(), chunk.at_src.end());
      theirs.insert(theirs.end(), chunk.at_dst.begin(), chunk.at_dst.end());
      buf.chunks.pop_front();
    }
    mine.resize(size);
    theirs.resize(size);
    std::string id = key_ids_.next_id().uuid();
    pending_[id] = Pending{master, slave, std::move(theirs), false};
    out.push_back({std::move(id), std::move(mine)});
  }
  return out;
}

std::vector<DeliveredKey> KeyService::dec_keys(const std::string& slave, const std::string& master,
                                               const std::vector<std::string>& key_ids) {
  std::unique_lock lock(sim_.mutex());
  identity(slave);
  identity(master);
  if (key_ids.empty()) throw Error(Errc::invalid_argument, "key_IDs must not be empty");
  // Validate the whole request before releasing anything.
  std::set<std::string> seen;
  for (const auto& id : key_ids) {
    auto it = pending_.find(id);
    if (it == pending_.end() || it->second.master != master || it->second.slave != slave) {
      throw Error(Errc::unknown_key_id, fmt::format("unknown key_ID {}", id));
    }
    if (it->second.retrieved || !seen.insert(id).second) {
      throw Error(Errc::key_already_retrieved, fmt::format("key_ID {} was already retrieved", id));
    }
  }
  std::vector<DeliveredKey> out;
  for (const auto& id : key_ids) {
    auto& p = pending_.at(id);
    out.push_back({id, std::move(p.key)});
    p.key.clear();
    p.retrieved = true;
  }
  return out;
}

std::string KeyService::stream_open(const std::string& src, const std::string& dst, const QoS& qos) {
  std::unique_lock lock(sim_.mutex());
  identity(src);
  identity(dst);
  if (src == dst) throw Error(Errc::invalid_argument, "stream endpoints must differ");
  const Id128 id = sim_.open(src, dst, qos);
  const std::string sid = id.uuid();
  streams_[sid] = Stream{id, src, dst, {{src, 0}, {dst, 0}}, false, std::nullopt};
  return sid;
}

void KeyService::trim(Stream& s, sim::SessionBuffer& buf) {
  const std::uint64_t slowest = std::min(s.cursor.at(s.src), s.cursor.at(s.dst));
  while (!buf.chunks.empty() && buf.chunks.front().index + config_.replay_window < slowest) buf.chunks.pop_front();
}

StreamChunk KeyService::stream_get(const std::string& key_stream_id, const std::string& caller,
                                   std::optional<std::uint64_t> index) {
  std::unique_lock lock(sim_.mutex());
  auto it = streams_.find(key_stream_id);
  if (it == streams_.end()) throw Error(Errc::unknown_session, fmt::format("unknown key stream {}", key_stream_id));
  Stream& s = it->second;
  if (caller != s.src && caller != s.dst) {
    throw Error(Errc::unknown_identity, fmt::format("SAE '{}' is not an endpoint of {}", caller, key_stream_id));
  }
  if (s.closed) throw Error(Errc::session_closed, fmt::format("key stream {} is closed", key_stream_id));
  const std::uint64_t next = s.cursor.at(caller);
  const std::uint64_t idx = index.value_or(next);
  if (idx > next || next - idx > config_.replay_window) {
    throw Error(Errc::out_of_window,
                fmt::format("index {} outside the window [{}, {}]", idx,
                            next > config_.replay_window ? next - config_.replay_window : 0, next));
  }
  auto closed_error = [&] {
    const auto& failure = sim_.controller().session(s.session).failure;
    return Error(Errc::session_closed,
                 fmt::format("key stream {} is no longer active{}{}", key_stream_id, failure.empty() ? "" : ": ",
                             failure));
  };
  if (!sim_.buffer(s.session)) throw closed_error();
  const int timeout = sim_.controller().session(s.session).qos.timeout_ms;
  if (!wait(lock, timeout, [&] {
        auto* b = sim_.buffer(s.session);
        return !b || b->next_index > idx;
      })) {
    throw Error(Errc::insufficient_key_timeout, fmt::format("chunk {} not delivered within {} ms", idx, timeout));
  }
  auto* buf = sim_.buffer(s.session);
  if (!buf) throw closed_error();
  if (buf->chunks.empty() || idx < buf->chunks.front().index) {
    throw Error(Errc::out_of_window, fmt::format("chunk {} is no longer held", idx));
  }
  const auto& chunk = buf->chunks.at(idx - buf->chunks.front().index);
  StreamChunk out{key_stream_id, idx, caller == s.src ? chunk.at_src : chunk.at_dst};
  if (idx == next) {
    ++s.cursor[caller];
    trim(s, *buf);
  }
  return out;
}

control::Accounting KeyService::stream_close(const std::string& key_stream_id, const std::string& caller) {
  std::unique_lock lock(sim_.mutex());
  auto it = streams_.find(key_stream_id);
  if (it == streams_.end()) throw Error(Errc::unknown_session, fmt::format("unknown key stream {}", key_stream_id));
  Stream& s = it->second;
  if (caller != s.src && caller != s.dst) {
    throw Error(Errc::unknown_identity, fmt::format("SAE '{}' is not an endpoint of {}", caller, key_stream_id));
  }
  if (s.closed) throw Error(Errc::session_closed, fmt::format("key stream {} is already closed", key_stream_id));
  s.closed = true;
  s.accounting = sim_.close(s.session);
  return *s.accounting;
}

void KeyService::shutdown() {
  std::unique_lock lock(sim_.mutex());
  for (auto& [id, s] : streams_) {
    if (!s.closed) {
      s.closed = true;
      s.accounting = sim_.close(s.session);
    }
  }
  for (const auto& [pair, id] : pairs_) {
    if (sim_.controller().session(id).state != control::SessionState::closed) sim_.close(id);
  }
  sim_.bus().pump();
}

RealtimeClock::RealtimeClock(sim::Simulation& sim, double speed) : sim_(sim), speed_(speed) {
  if (!(speed > 0)) throw Error(Errc::invalid_argument, "clock speed must be positive");
}

RealtimeClock::~RealtimeClock() { stop(); }

void RealtimeClock::start() {
  if (running_.exchange(true)) return;
  thread_ = std::thread([this] {
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(sim_.tick_s() / speed_));
    auto next = std::chrono::steady_clock::now();
    while (running_) {
      next += period;
      std::this_thread::sleep_until(next);
      {
        std::lock_guard lock(sim_.mutex());
        sim_.advance();
      }
      sim_.ticked().notify_all();
    }
  });
}

void RealtimeClock::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
}

namespace {

json error_body(const std::string& message) { return json{{"message", message}}; }

std::string caller_of(const httplib::Request& req) {
  if (req.has_header("X-SAE-ID")) return req.get_header_value("X-SAE-ID");
  if (req.has_param("sae_id")) return req.get_param_value("sae_id");
  throw Error(Errc::invalid_argument, "missing caller identity (X-SAE-ID header or sae_id parameter)");
}

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw Error(Errc::invalid_argument, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_argument, fmt::format("malformed JSON body: {}", e.what()));
  }
}

std::size_t bits_to_bytes(const json& v) {
  if (!v.is_number_unsigned()) throw Error(Errc::invalid_argument, "size must be a positive integer");
  const auto bits = v.get<std::size_t>();
  if (bits == 0 || bits % 8 != 0) throw Error(Errc::invalid_argument, "size must be a positive multiple of 8 bits");
  return bits / 8;
}

json keys_json(const std::vector<DeliveredKey>& keys) {
  json arr = json::array();
  for (const auto& k : keys) arr.push_back(json{{"key_ID", k.key_ID}, {"key", base64_encode(k.key)}});
  return json{{"keys", arr}};
}

QoS qos_json(const json& j, const QoS& defaults) {
  QoS q = defaults;
  if (j.is_null()) return q;
  if (!j.is_object()) throw Error(Errc::invalid_argument, "qos must be an object");
  try {
    q.key_chunk_size = j.value("key_chunk_size", q.key_chunk_size);
    q.min_bps = j.value("min_bps", q.min_bps);
    q.max_bps = j.value("max_bps", std::max(q.max_bps, q.min_bps));
    q.priority = j.value("priority", q.priority);
    q.timeout_ms = j.value("timeout", q.timeout_ms);
    q.ttl_s = j.value("ttl", q.ttl_s);
    q.diversity = j.value("diversity", q.diversity);
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_argument, fmt::format("malformed qos: {}", e.what()));
  }
  control::validate(q);
  return q;
}

}  // namespace

struct HttpServer::Impl {
  KeyService& svc;
  httplib::Server server;
  std::atomic<bool> stopped{false};

  explicit Impl(KeyService& s) : svc(s) {
    // SO_REUSEADDR only: with SO_REUSEPORT a second server could share a busy port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    auto guard = [](const httplib::Request& req, httplib::Response& res,
                    const std::function<json(const httplib::Request&)>& fn) {
      try {
        res.set_content(fn(req).dump(), "application/json");
        res.status = 200;
      } catch (const Error& e) {
        res.status = http_status(e.code());
        res.set_content(error_body(e.what()).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(error_body(e.what()).dump(), "application/json");
      }
    };

    server.Get(R"(/api/v1/keys/([^/]+)/status)", [this, guard](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [this](const httplib::Request& r) {
        const auto st = svc.status(caller_of(r), r.matches[1].str());
        return json{{"source_KME_ID", st.source_KME_ID},
                    {"target_KME_ID", st.target_KME_ID},
                    {"master_SAE_ID", st.master_SAE_ID},
                    {"slave_SAE_ID", st.slave_SAE_ID},
                    {"key_size", st.key_size * 8},
                    {"stored_key_count", st.stored_key_count},
                    {"max_key_count", st.max_key_count},
                    {"max_key_per_request", st.max_key_per_request},
                    {"max_key_size", st.max_key_size * 8},
                    {"min_key_size", st.min_key_size * 8},
                    {"max_SAE_ID_count", 0}};
      });
    });

    server.Post(R"(/api/v1/keys/([^/]+)/enc_keys)", [this, guard](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [this](const httplib::Request& r) {
        const auto master = caller_of(r);
        const auto body = body_of(r);
        std::size_t number = 1;
        if (body.contains("number")) {
          if (!body["number"].is_number_unsigned()) throw Error(Errc::invalid_argument, "number must be an integer");
          number = body["number"].get<std::size_t>();
        }
        std::optional<std::size_t> size;
        if (body.contains("size")) {
          size = bits_to_bytes(body["size"]);
          if (*size > svc.config().max_key_size) {
            throw Error(Errc::key_size_exceeded, fmt::format("size {} bits exceeds max_key_size {} bits", *size * 8,
                                                             svc.config().max_key_size * 8));
          }
        }
        return keys_json(svc.enc_keys(master, r.matches[1].str(), number, size));
      });
    });

    server.Post(R"(/api/v1/keys/([^/]+)/dec_keys)", [this, guard](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [this](const httplib::Request& r) {
        const auto slave = caller_of(r);
        const auto body = body_of(r);
        std::vector<std::string> ids;
        if (!body.contains("key_IDs") || !body["key_IDs"].is_array()) {
          throw Error(Errc::invalid_argument, "key_IDs must be an array");
        }
        for (const auto& k : body["key_IDs"]) {
          if (!k.is_object() || !k.contains("key_ID") || !k["key_ID"].is_string()) {
            throw Error(Errc::invalid_argument, "each key_IDs entry needs a string key_ID");
          }
          ids.push_back(k["key_ID"].get<std::string>());
        }
        return keys_json(svc.dec_keys(slave, r.matches[1].str(), ids));
      });
    });

    server.Post("/qkd004/open", [this, guard](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [this](const httplib::Request& r) {
        const auto body = body_of(r);
        if (!body.contains("source") || !body.contains("destination") || !body["source"].is_string() ||
            !body["destination"].is_string()) {
          throw Error(Errc::invalid_argument, "source and destination are required");
        }
        const auto src = body["source"].get<std::string>();
        const auto dst = body["destination"].get<std::string>();
        const QoS q = qos_json(body.contains("qos") ? body["qos"] : json(), QoS{});
        const auto id = svc.stream_open(src, dst, q);
        return json{{"key_stream_id", id},
                    {"source", src},
                    {"destination", dst},
                    {"qos",
                     {{"key_chunk_size", q.key_chunk_size},
                      {"min_bps", q.min_bps},
                      {"max_bps", q.max_bps},
                      {"priority", q.priority},
                      {"timeout", q.timeout_ms},
                      {"ttl", q.ttl_s},
                      {"diversity", q.diversity}}}};
      });
    });

    server.Get("/qkd004/get", [this, guard](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [this](const httplib::Request& r) {
        if (!r.has_param("key_stream_id")) throw Error(Errc::invalid_argument, "key_stream_id is required");
        std::optional<std::uint64_t> index;
        if (r.has_param("index")) {
          const auto& text = r.get_param_value("index");
          if (text.empty() || !std::ranges::all_of(text, [](char c) { return c >= '0' && c <= '9'; })) {
            throw Error(Errc::invalid_argument, "index must be a non-negative integer");
          }
          index = std::stoull(text);
        }
        const auto c = svc.stream_get(r.get_param_value("key_stream_id"), caller_of(r), index);
        return json{{"key_stream_id", c.key_stream_id}, {"index", c.index}, {"key", base64_encode(c.key)}};
      });
    });

    server.Post("/qkd004/close", [this, guard](const httplib::Request& req, httplib::Response& res) {
      guard(req, res, [this](const httplib::Request& r) {
        const auto body = body_of(r);
        if (!body.contains("key_stream_id") || !body["key_stream_id"].is_string()) {
          throw Error(Errc::invalid_argument, "key_stream_id is required");
        }
        const auto id = body["key_stream_id"].get<std::string>();
        const auto acc = svc.stream_close(id, caller_of(r));
        return json{{"key_stream_id", id},
                    {"state", control::to_string(acc.final_state)},
                    {"delivered_chunks", acc.delivered_chunks},
                    {"delivered_bytes", acc.delivered_bytes},
                    {"consumed_per_link", acc.consumed_per_link}};
      });
    });
  }
};

HttpServer::HttpServer(KeyService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error(Errc::io_error, fmt::format("cannot bind {}", host));
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(Errc::io_error, fmt::format("cannot bind {}:{}", host, port));
  }
  return port;
}

void HttpServer::listen() {
  if (!impl_->stopped) impl_->server.listen_after_bind();
}

void HttpServer::wait_until_ready() { impl_->server.wait_until_ready(); }

void HttpServer::stop() {
  if (!impl_) return;
  impl_->stopped = true;
  impl_->server.stop();
}

}  // namespace qkdnet::northbound

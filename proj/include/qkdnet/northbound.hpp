#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "qkdnet/controller.hpp"
#include "qkdnet/error.hpp"
#include "qkdnet/simulation.hpp"

namespace qkdnet::northbound {

struct ServiceConfig {
  std::size_t key_size = 32;  // bytes; one chunk of an implicit 014 session
  std::size_t max_key_size = 1024;
  std::size_t max_key_per_request = 128;
  std::size_t max_key_count = 4096;
  int timeout_ms = 1000;
  std::size_t replay_window = 16;
  control::QoS default_qos{};
  std::uint64_t seed = 0;
};

struct DeliveredKey {
  std::string key_ID;
  Bytes key;
};

struct KeyStatus {
  std::string source_KME_ID;
  std::string target_KME_ID;
  std::string master_SAE_ID;
  std::string slave_SAE_ID;
  std::size_t key_size = 0;  // bytes
  std::size_t stored_key_count = 0;
  std::size_t max_key_count = 0;
  std::size_t max_key_per_request = 0;
  std::size_t max_key_size = 0;
  std::size_t min_key_size = 1;
};

struct StreamChunk {
  std::string key_stream_id;
  std::uint64_t index = 0;
  Bytes key;
};

// Application-facing key delivery over one Simulation. Every call takes the
// simulation mutex. With `live` set another thread advances the clock
// (RealtimeClock) and blocking calls wait for it; otherwise waiting advances
// the simulation in place, which keeps in-process runs deterministic.
class KeyService {
 public:
  KeyService(sim::Simulation& sim, ServiceConfig config = {}, bool live = false);

  // 014-style; `master` calls enc_keys and status, `slave` calls dec_keys.
  KeyStatus status(const std::string& master, const std::string& slave);
  std::vector<DeliveredKey> enc_keys(const std::string& master, const std::string& slave, std::size_t number,
                                     std::optional<std::size_t> size_bytes = std::nullopt);
  std::vector<DeliveredKey> dec_keys(const std::string& slave, const std::string& master,
                                     const std::vector<std::string>& key_ids);

  // 004-style streams. `index` defaults to the caller's next unread chunk.
  std::string stream_open(const std::string& src, const std::string& dst, const control::QoS& qos);
  StreamChunk stream_get(const std::string& key_stream_id, const std::string& caller,
                         std::optional<std::uint64_t> index = std::nullopt);
  control::Accounting stream_close(const std::string& key_stream_id, const std::string& caller);

  // Closes every session this service opened.
  void shutdown();

  const ServiceConfig& config() const { return config_; }
  sim::Simulation& simulation() { return sim_; }

 private:
  struct Pending {
    std::string master;
    std::string slave;
    Bytes key;
    bool retrieved = false;
  };
  struct Stream {
    Id128 session;
    std::string src;
    std::string dst;
    std::map<std::string, std::uint64_t> cursor;  // app -> next unread index
    bool closed = false;
    std::optional<control::Accounting> accounting;
  };

  const netmodel::Application& identity(const std::string& app) const;
  sim::SessionBuffer& pair_buffer(const std::string& master, const std::string& slave);
  // Waits until `ready` holds or the timeout passes; returns ready().
  bool wait(std::unique_lock<std::mutex>& lock, int timeout_ms, const std::function<bool()>& ready);
  void trim(Stream& s, sim::SessionBuffer& buf);

  sim::Simulation& sim_;
  ServiceConfig config_;
  bool live_;
  KeyStream key_ids_;
  std::map<std::pair<std::string, std::string>, Id128> pairs_;
  std::map<std::string, Pending> pending_;
  std::map<std::string, Stream> streams_;
};

// Advances the simulation in real time: one tick every tick_s / speed seconds.
class RealtimeClock {
 public:
  RealtimeClock(sim::Simulation& sim, double speed = 1.0);
  ~RealtimeClock();
  void start();
  void stop();

 private:
  sim::Simulation& sim_;
  double speed_;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

// HTTP binding of KeyService. The caller's SAE id comes from the X-SAE-ID
// header or the sae_id query parameter.
class HttpServer {
 public:
  explicit HttpServer(KeyService& service);
  ~HttpServer();

  // Returns the bound port; throws io_error when the address is unavailable.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void wait_until_ready();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// HTTP status for an error code on the northbound.
int http_status(Errc code);

}  // namespace qkdnet::northbound

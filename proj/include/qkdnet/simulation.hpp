#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qkdnet/controller.hpp"
#include "qkdnet/lkms.hpp"
#include "qkdnet/messages.hpp"
#include "qkdnet/netmodel.hpp"
#include "qkdnet/optics.hpp"
#include "qkdnet/qkdsim.hpp"

namespace qkdnet::sim {

struct SimConfig {
  std::uint64_t seed = 0;
  double tick_s = 1.0;
  // Optional sinks; all owned by the caller.
  std::ostream* metrics = nullptr;  // CSV, header written on construction
  std::ostream* trace = nullptr;    // controller-agent message records
  std::ostream* relay = nullptr;    // relay wire records of every forwarded chunk
  // Chunks held per session before forwarding pauses.
  std::size_t buffer_cap = 4096;
};

// One key chunk as held at the two service endpoints. Both copies come out of
// the relay independently; they are equal unless the relay is broken.
struct DeliveredChunk {
  std::uint64_t index = 0;
  Id128 id;
  Bytes at_src;
  Bytes at_dst;
};

struct SessionBuffer {
  std::uint64_t next_index = 0;  // index the next produced chunk receives
  std::deque<DeliveredChunk> chunks;
  double credit_bytes = 0;
  double min_credit_bytes = 0;  // share of credit backed by min_bps
};

struct WorkloadResult {
  double at_s = 0;
  std::size_t line = 0;
  std::string verb;
  std::string label;
  std::string expect;
  // "ok" or the error code name.
  std::string outcome;
  std::string detail;
  bool met = true;
};

// Owns one complete network: link simulators, per-node agents with their key
// stores, the controller and the message bus. Not thread-safe; serve mode
// wraps every call in mutex().
class Simulation {
 public:
  Simulation(netmodel::NetworkModel model, SimConfig config);
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  const netmodel::NetworkModel& model() const { return model_; }
  control::Controller& controller() { return *controller_; }
  const control::Controller& controller() const { return *controller_; }
  control::Agent& agent(const std::string& node);
  qkdsim::QkdLinkState& link(const std::string& id);
  const std::map<std::string, optics::SwitchedConnection>& connections() const { return connections_; }
  control::MessageBus& bus() { return bus_; }

  std::uint64_t tick() const { return tick_; }
  double now() const { return static_cast<double>(tick_) * config_.tick_s; }
  double tick_s() const { return config_.tick_s; }

  // Runs due workload commands, steps every link once, reports to the
  // controller, expires sessions and forwards key for active sessions.
  void advance();
  void run_for(double seconds);

  Id128 open(const std::string& src_app, const std::string& dst_app, const control::QoS& qos,
             std::string label = {});
  control::Accounting close(const Id128& session);
  // Closes every session still active; returns their accounting.
  std::vector<control::Accounting> close_all();

  // nullptr once the session is closed or failed.
  SessionBuffer* buffer(const Id128& session);
  std::optional<Id128> find_label(const std::string& label) const;

  const std::vector<WorkloadResult>& workload_results() const { return results_; }
  bool workload_ok() const;

  std::mutex& mutex() { return mutex_; }
  // Notified after every tick in serve mode.
  std::condition_variable& ticked() { return ticked_; }

 private:
  void run_workload();
  void execute(const netmodel::WorkloadCommand& cmd);
  // `reserved` limits this pass to the min_bps share.
  void forward(control::ServiceSession& s, SessionBuffer& buf, bool reserved);
  bool produce_chunk(control::ServiceSession& s, SessionBuffer& buf);
  lkms::KeyChunk end_key(const std::string& node, std::size_t len);

  netmodel::NetworkModel model_;
  SimConfig config_;
  std::map<std::string, optics::SwitchedConnection> connections_;
  std::vector<qkdsim::QkdLinkState> links_;  // declaration order
  control::MessageBus bus_;
  std::unique_ptr<control::Controller> controller_;
  std::map<std::string, std::unique_ptr<control::Agent>> agents_;
  std::map<std::string, KeyStream> local_;
  std::map<Id128, SessionBuffer> buffers_;
  std::map<std::string, Id128> labels_;
  std::size_t next_command_ = 0;
  std::vector<WorkloadResult> results_;
  std::uint64_t tick_ = 0;
  std::mutex mutex_;
  std::condition_variable ticked_;
};

// Parses a QoS from workload-style options (min_bps, max_bps, chunk,
// diversity, ttl, priority, timeout_ms); unknown keys are ignored.
control::QoS qos_from_options(const std::map<std::string, std::string>& options);

}  // namespace qkdnet::sim

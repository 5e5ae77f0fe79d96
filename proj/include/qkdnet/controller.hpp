#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qkdnet/keystream.hpp"
#include "qkdnet/lkms.hpp"
#include "qkdnet/messages.hpp"
#include "qkdnet/netmodel.hpp"
#include "qkdnet/optics.hpp"

namespace qkdnet::control {

inline const std::string kControllerAddress = "controller";
inline std::string agent_address(std::string_view node) { return "agent:" + std::string(node); }

struct QoS {
  std::size_t key_chunk_size = 32;
  double min_bps = 256;
  double max_bps = 1024;
  int priority = 0;
  int timeout_ms = 1000;
  // 0 = no expiry.
  double ttl_s = 0;
  // 2 requests two link-disjoint paths whose keys are XOR-combined.
  int diversity = 1;

  bool operator==(const QoS&) const = default;
};

// Throws invalid_argument unless 0 < min <= max, chunk > 0, diversity 1..2.
void validate(const QoS& qos);

enum class SessionState { requested, configured, active, closed, failed };
std::string_view to_string(SessionState state);

struct PathPlan {
  std::vector<std::string> nodes;
  std::vector<std::string> links;  // links[i] joins nodes[i] and nodes[i + 1]
  double bottleneck_bps = 0;
  std::size_t hops() const { return links.size(); }
  bool operator==(const PathPlan& o) const { return nodes == o.nodes && links == o.links; }
};

struct ServiceSession {
  Id128 id;
  std::string label;
  std::string src_app;
  std::string dst_app;
  std::string src_node;
  std::string dst_node;
  QoS qos;
  SessionState state = SessionState::requested;
  bool degraded = false;
  std::string failure;
  std::vector<PathPlan> paths;
  std::vector<std::string> stream_tags;
  double opened_at = 0;
  std::uint64_t delivered_chunks = 0;
  std::uint64_t delivered_bytes = 0;
  std::map<std::string, std::uint64_t> consumed_per_link;

  bool operator==(const ServiceSession&) const = default;
};

struct HopConfig {
  Id128 session;
  std::string node;
  std::string peer;
  std::string link;
  int wavelength = 0;
  double expected_attenuation_db = 0;
  // LKMS pool the hop draws from: (peer, any vendor, distilled).
  std::string pool_peer;
};

struct Accounting {
  Id128 session;
  std::string label;
  SessionState final_state = SessionState::closed;
  std::uint64_t delivered_chunks = 0;
  std::uint64_t delivered_bytes = 0;
  std::map<std::string, std::uint64_t> consumed_per_link;
};

struct NodeDescriptor {
  std::string node;
  std::string address;
  std::vector<std::string> modules;
  std::vector<std::string> links;
  std::map<std::string, std::size_t> pool_levels;  // peer -> available bytes
  std::set<std::string> interfaces = {"004", "014"};
};

struct LinkView {
  std::string id;
  std::string a;
  std::string b;
  int channel = 0;
  double loss_db = 0;
  double rate_bps = 0;
  double qber = 0;
  double reserved_bps = 0;
  bool alive = true;
  bool registered = false;
};

struct NetworkStatus {
  std::vector<std::string> nodes;
  std::vector<LinkView> links;
  std::vector<ServiceSession> sessions;
  std::map<std::string, std::map<std::string, std::size_t>> pools;  // node -> peer -> bytes
};

// Provisions every declared link, in declaration order, on one shared
// occupancy. Each link keeps its own id as connection id.
std::map<std::string, optics::SwitchedConnection> provision_links(const netmodel::NetworkModel& model,
                                                                   optics::Occupancy& occupancy);

class Controller {
 public:
  Controller(const netmodel::NetworkModel& model, const std::map<std::string, optics::SwitchedConnection>& links,
             MessageBus* bus = nullptr, std::uint64_t seed = 0);

  // Inbound message entry point; duplicates (by message id) are ignored.
  void handle(const Message& msg);

  void register_node(const NodeDescriptor& descriptor);
  bool is_registered(std::string_view node) const { return registered_.contains(std::string(node)); }

  // Reports a measured rate/QBER. A rate change marks sessions over the link
  // degraded; a dead link (rate 0) fails them and drops their reservations.
  void update_link(const std::string& link, double rate_bps, double qber);

  // Minimum-hop paths whose every link has residual >= min_bps; tie-break by
  // largest bottleneck residual, then lexicographic nodes and links. With
  // diversity 2 the two paths share no link. Throws no_feasible_path or
  // admission_rejected (feasible by raw rate, blocked by reservations).
  std::vector<PathPlan> compute_path(const std::string& src_node, const std::string& dst_node, const QoS& qos) const;

  Id128 open_connect(const std::string& src_app, const std::string& dst_app, const QoS& qos, double now = 0,
                     std::string label = {});
  Accounting close(const Id128& session);

  const ServiceSession& session(const Id128& id) const;
  ServiceSession& session_mut(const Id128& id);
  const std::map<Id128, ServiceSession>& sessions() const { return sessions_; }
  std::vector<HopConfig> hop_configs(const Id128& session) const;

  NetworkStatus network_status() const;
  const LinkView& link(const std::string& id) const { return links_.at(id); }
  const std::map<std::string, LinkView>& links() const { return links_; }

  // Session table as canonical JSON; restore() rebuilds reservations from it.
  std::string snapshot() const;
  void restore(const std::string& snapshot);

  // Test hook: added to the expected attenuation the controller sends for
  // `link`, to exercise the agents' ±1 dB check.
  void set_attenuation_bias(const std::string& link, double db) { attenuation_bias_[link] = db; }

 private:
  void reserve(const ServiceSession& s);
  void release(const ServiceSession& s);
  double residual(const LinkView& l) const { return l.rate_bps - l.reserved_bps; }
  void fail_session(ServiceSession& s, const std::string& why);
  void on_message(const Message& msg);

  const netmodel::NetworkModel& model_;
  MessageBus* bus_;
  KeyStream ids_;
  std::map<std::string, LinkView> links_;
  std::set<std::string> registered_;
  std::map<std::string, NodeDescriptor> descriptors_;
  std::map<Id128, ServiceSession> sessions_;
  std::map<Id128, std::vector<HopConfig>> hop_configs_;
  std::map<std::string, double> attenuation_bias_;
  std::set<std::uint64_t> seen_;
  std::vector<Message> alarms_;
};

// Per-node agent: owns the LKMS key store, answers CONFIG_HOP with a local
// attenuation check and reports pool levels.
class Agent {
 public:
  Agent(const netmodel::NetworkModel& model, std::string node,
        const std::map<std::string, optics::SwitchedConnection>& links, MessageBus* bus, std::uint64_t seed);

  const std::string& node() const { return node_; }
  lkms::KeyStore& store() { return store_; }
  const lkms::KeyStore& store() const { return store_; }

  NodeDescriptor descriptor() const;
  // Sends REGISTER to the controller.
  void start();
  void handle(const Message& msg);
  // Sends POOL_REPORT with pool levels and the given link measurements.
  void report(const std::map<std::string, std::pair<double, double>>& link_rates);

  const std::map<Id128, std::vector<HopConfig>>& hops() const { return hops_; }
  std::size_t handled() const { return seen_.size(); }

 private:
  const netmodel::NetworkModel& model_;
  std::string node_;
  const std::map<std::string, optics::SwitchedConnection>& links_;
  MessageBus* bus_;
  lkms::KeyStore store_;
  std::set<std::uint64_t> seen_;
  std::map<Id128, std::vector<HopConfig>> hops_;
  std::set<Id128> endpoint_sessions_;
};

}  // namespace qkdnet::control

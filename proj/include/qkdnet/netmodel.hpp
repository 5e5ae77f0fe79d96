#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace qkdnet::netmodel {

enum class Strands { duplex_pair, single_bidi };
enum class ElementKind { fixed_mux, bidi_mux, optical_switch };
enum class Family { DV, CV };
enum class Role { transmitter, receiver, transceiver };
enum class KeyMode { distilled, raw };
enum class ChannelKind { classical, quantum };
enum class PowerClass { low, high };

inline constexpr double kDefaultFibreLossDbPerKm = 0.2;
inline constexpr double kDefaultSwitchInsertionLossDb = 1.0;

struct Node {
  std::string id;
  std::string label;
  std::string domain;
  bool trusted = true;
  bool lkms = true;
  // Derived from module/app declarations at load time.
  std::vector<std::string> hosted_modules;
  std::vector<std::string> hosted_apps;

  bool operator==(const Node&) const = default;
};

struct FibreSpan {
  std::string id;
  std::string label;
  std::string a;
  std::string b;
  double length_km = 0.0;
  std::optional<double> declared_loss_db;
  Strands strands = Strands::duplex_pair;
  std::vector<std::string> domains;

  // Declared attenuation, or 0.2 dB/km of length when absent.
  double loss_db() const;
  bool touches(std::string_view node) const { return a == node || b == node; }
  const std::string& other_end(std::string_view node) const { return a == node ? b : a; }

  bool operator==(const FibreSpan&) const = default;
};

struct PortRef {
  enum class Kind { span, element, module };
  Kind kind = Kind::span;
  std::string id;

  auto operator<=>(const PortRef&) const = default;
};

struct OpticalElement {
  std::string id;
  std::string node;
  ElementKind kind = ElementKind::fixed_mux;
  std::set<int> passband;
  std::optional<double> declared_insertion_loss_db;
  bool amplified = false;
  std::vector<PortRef> ports;

  double insertion_loss_db() const;
  bool filters() const { return kind != ElementKind::optical_switch; }

  bool operator==(const OpticalElement&) const = default;
};

struct RateParams {
  double r0_bps = 0.0;
  double max_loss_db = 0.0;
  double qber0 = 0.0;
  double noise_coeff = 0.0;
  // Overrides the family default abort threshold (DV 0.11, CV 0.25).
  std::optional<double> abort_qber;

  bool operator==(const RateParams&) const = default;
};

struct QkdModule {
  std::string id;
  std::string node;
  std::string vendor;
  Family family = Family::DV;
  Role role = Role::transceiver;
  bool tunable = false;
  std::optional<int> fixed_channel;
  std::string domain;
  RateParams rate;
  std::optional<bool> raw_capable;

  bool can_deliver_raw() const { return raw_capable.value_or(family == Family::CV); }
  double abort_threshold() const;
  bool can_transmit() const { return role != Role::receiver; }
  bool can_receive() const { return role != Role::transmitter; }

  bool operator==(const QkdModule&) const = default;
};

// Declared point-to-point QKD link between a transmitting and a receiving module.
// Switched links get their optical path from the optics layer at provisioning.
struct QkdLink {
  std::string id;
  std::string src_module;
  std::string dst_module;
  std::string domain;
  bool switched = false;
  KeyMode mode = KeyMode::distilled;

  bool operator==(const QkdLink&) const = default;
};

struct Channel {
  std::string id;
  std::string span;
  ChannelKind kind = ChannelKind::classical;
  std::string role = "data";
  PowerClass power = PowerClass::low;
  bool encrypted = false;
  std::optional<std::string> link;

  bool operator==(const Channel&) const = default;
};

struct Application {
  std::string id;
  std::string node;
  std::string kind = "sae";
  std::string domain;

  bool is_encryptor() const { return kind.starts_with("encryptor"); }

  bool operator==(const Application&) const = default;
};

struct WorkloadCommand {
  double at_s = 0.0;
  std::string verb;
  std::vector<std::string> args;
  std::map<std::string, std::string> options;
  std::size_t line = 0;

  bool operator==(const WorkloadCommand& o) const {
    return at_s == o.at_s && verb == o.verb && args == o.args && options == o.options;
  }
};

struct NetworkModel {
  std::vector<Node> nodes;
  std::vector<FibreSpan> spans;
  std::vector<OpticalElement> elements;
  std::vector<QkdModule> modules;
  std::vector<QkdLink> links;
  std::vector<Channel> channels;
  std::vector<Application> apps;
  std::vector<WorkloadCommand> workload;

  const Node* find_node(std::string_view id) const;
  const FibreSpan* find_span(std::string_view id) const;
  const OpticalElement* find_element(std::string_view id) const;
  const QkdModule* find_module(std::string_view id) const;
  const QkdLink* find_link(std::string_view id) const;
  const Application* find_app(std::string_view id) const;

  // Throwing variants; Errc::unknown_entity names the missing id.
  const Node& node(std::string_view id) const;
  const FibreSpan& span(std::string_view id) const;
  const QkdModule& module(std::string_view id) const;
  const QkdLink& link(std::string_view id) const;
  const Application& app(std::string_view id) const;

  // Node ids of a link's two endpoints (src module's node first).
  std::pair<std::string, std::string> link_nodes(std::string_view link_id) const;

  bool operator==(const NetworkModel&) const = default;
};

// Parses and validates a scenario document. Throws ParseError for grammar
// problems, Error(dangling_reference) and Error(invariant_violation) otherwise.
NetworkModel load_scenario(std::string_view document);
NetworkModel load_scenario_file(const std::string& path);

// Canonical text form; load_scenario(serialize(m)) == m.
std::string serialize(const NetworkModel& model);

// Re-runs referential-integrity and invariant checks on an in-memory model.
void validate(NetworkModel& model);

struct DomainSummary {
  std::string domain;
  std::size_t nodes = 0;
  std::size_t qkd_links = 0;
  bool border = false;
  bool switched = false;
  double length_km = 0.0;
  std::size_t modules = 0;
  std::size_t encryptors = 0;

  // "3 + border", "all-to-all", "4".
  std::string links_label() const;
};

struct Summary {
  std::vector<DomainSummary> domains;
  DomainSummary total;
};

Summary summarize(const NetworkModel& model);

struct ChannelCensus {
  std::string link;
  std::size_t classical = 0;
  std::size_t quantum = 0;
  std::size_t encrypted = 0;

  bool operator==(const ChannelCensus&) const = default;
};

// Channel counts on the inter-node connection (fibre span) `span_id`.
ChannelCensus coexistence_census(const NetworkModel& model, std::string_view span_id);

// Weighted count of classical channels (low = 1, high = 3) over the given spans.
double classical_power_index(const NetworkModel& model, const std::vector<std::string>& span_ids);

std::string_view to_string(ElementKind kind);
std::string_view to_string(Family family);
std::string_view to_string(Role role);
std::string_view to_string(KeyMode mode);

}  // namespace qkdnet::netmodel

#pragma once

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "qkdnet/netmodel.hpp"

namespace qkdnet::testing {

inline std::string data_path(const std::string& name) { return std::string(QKDNET_DATA_DIR) + "/" + name; }

inline const netmodel::NetworkModel& bundled_model() {
  static const netmodel::NetworkModel model = netmodel::load_scenario_file(data_path("madqci.scenario"));
  return model;
}

struct SwitchedTopologyParams {
  double switch_loss_db = 1.0;
  double mux_loss_db = 0.5;
  bool random_passbands = false;
};

// Canonical switched network: every node has one fibre switch, one fixed mux
// per incident span (ports span + switch) and its modules on the switch. The
// structure is simple enough for a node-level brute-force oracle.
inline netmodel::NetworkModel random_switched_topology(std::uint64_t seed, int n_nodes,
                                                       const SwitchedTopologyParams& params = {}) {
  using namespace netmodel;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> loss(0.5, 6.0);
  NetworkModel m;
  for (int i = 0; i < n_nodes; ++i) {
    m.nodes.push_back(Node{fmt::format("N{}", i), fmt::format("N{}", i), "X", true, true, {}, {}});
  }
  // Random spanning tree plus extra chords, no parallel spans.
  std::set<std::pair<int, int>> edges;
  for (int i = 1; i < n_nodes; ++i) {
    int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i));
    edges.insert({j, i});
  }
  int extra = static_cast<int>(rng() % static_cast<std::uint64_t>(n_nodes + 1));
  for (int k = 0; k < extra; ++k) {
    int a = static_cast<int>(rng() % n_nodes);
    int b = static_cast<int>(rng() % n_nodes);
    if (a == b) continue;
    edges.insert({std::min(a, b), std::max(a, b)});
  }
  for (const auto& [a, b] : edges) {
    FibreSpan s;
    s.id = fmt::format("S{}-{}", a, b);
    s.label = s.id;
    s.a = fmt::format("N{}", a);
    s.b = fmt::format("N{}", b);
    s.length_km = 10;
    s.declared_loss_db = std::round(loss(rng) * 10.0) / 10.0;
    m.spans.push_back(s);
  }
  const std::set<int> full = {34, 37, 38};
  for (const auto& n : m.nodes) {
    OpticalElement sw;
    sw.id = n.id + ".sw";
    sw.node = n.id;
    sw.kind = ElementKind::optical_switch;
    sw.declared_insertion_loss_db = params.switch_loss_db;
    m.elements.push_back(sw);
  }
  for (const auto& s : m.spans) {
    for (const auto& end : {s.a, s.b}) {
      OpticalElement mux;
      mux.id = fmt::format("{}.mux-{}", end, s.id);
      mux.node = end;
      mux.kind = ElementKind::fixed_mux;
      mux.passband = full;
      if (params.random_passbands && rng() % 3 == 0) mux.passband.erase(34 + 3 * static_cast<int>(rng() % 2));
      mux.declared_insertion_loss_db = params.mux_loss_db;
      mux.ports = {{PortRef::Kind::span, s.id}, {PortRef::Kind::element, end + ".sw"}};
      m.elements.push_back(mux);
    }
  }
  int mod_count = n_nodes + static_cast<int>(rng() % static_cast<std::uint64_t>(n_nodes));
  for (int k = 0; k < mod_count; ++k) {
    QkdModule q;
    q.id = fmt::format("M{}", k);
    q.node = fmt::format("N{}", rng() % n_nodes);
    q.vendor = "V";
    q.family = Family::CV;
    q.role = static_cast<Role>(rng() % 3);
    q.tunable = rng() % 4 != 0;
    if (!q.tunable) q.fixed_channel = std::array{32, 34, 37, 38}[rng() % 4];
    q.rate = RateParams{1000, 15, 0.02, 0.0, std::nullopt};
    m.modules.push_back(q);
    auto sw = std::ranges::find_if(m.elements, [&](const auto& e) { return e.id == q.node + ".sw"; });
    sw->ports.push_back({PortRef::Kind::module, q.id});
  }
  // Switch ports to its muxes so the switch is not an island.
  for (auto& e : m.elements) {
    if (e.kind != ElementKind::optical_switch) continue;
    for (const auto& other : m.elements) {
      if (other.node == e.node && other.kind == ElementKind::fixed_mux) {
        e.ports.push_back({PortRef::Kind::element, other.id});
      }
    }
  }
  // Nodes with no spans would leave an isolated switch; the tree guarantees
  // every node has at least one span when n_nodes > 1.
  validate(m);
  return m;
}

}  // namespace qkdnet::testing

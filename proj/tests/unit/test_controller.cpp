#include <doctest.h>

#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "qkdnet/controller.hpp"
#include "qkdnet/error.hpp"
#include "qkdnet/qkdsim.hpp"

using namespace qkdnet;
using namespace qkdnet::control;
using qkdnet::testing::bundled_model;

namespace {

// Bundled network with every agent registered through the bus and every link
// reporting its simulated rate.
struct Bench {
  const netmodel::NetworkModel& model = bundled_model();
  optics::Occupancy occ;
  std::map<std::string, optics::SwitchedConnection> links = provision_links(model, occ);
  MessageBus bus;
  Controller ctl{model, links, &bus, 3};
  std::vector<std::unique_ptr<Agent>> agents;
  std::map<std::string, double> rates;

  explicit Bench(bool start = true) {
    for (const auto& n : model.nodes) agents.push_back(std::make_unique<Agent>(model, n.id, links, &bus, 3));
    for (const auto& [id, c] : links) rates[id] = qkdsim::make_link_state(model, id, c, 3).current_rate_bps;
    if (!start) return;
    for (auto& a : agents) a->start();
    bus.pump();
    for (const auto& [id, r] : rates) ctl.update_link(id, r, 0.02);
  }
};

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::io_error;
}

struct OracleAnswer {
  std::optional<PathPlan> plan;
  bool raw_feasible = false;
};

// Enumerates every node-level simple path, takes the best parallel link per hop
// and keeps the minimum (hops, -bottleneck, nodes, links).
OracleAnswer brute_force(const Controller& ctl, const std::string& src, const std::string& dst, double need) {
  std::map<std::pair<std::string, std::string>, std::vector<const LinkView*>> parallel;
  std::map<std::string, std::set<std::string>> nbr;
  for (const auto& [id, l] : ctl.links()) {
    if (!l.registered || !l.alive) continue;
    parallel[{std::min(l.a, l.b), std::max(l.a, l.b)}].push_back(&l);
    nbr[l.a].insert(l.b);
    nbr[l.b].insert(l.a);
  }
  auto pick = [&](const std::string& a, const std::string& b, bool raw) -> const LinkView* {
    const LinkView* best = nullptr;
    for (const auto* l : parallel[{std::min(a, b), std::max(a, b)}]) {
      const double v = raw ? l->rate_bps : l->rate_bps - l->reserved_bps;
      if (v + 1e-9 * need < need) continue;
      const double bv = best ? (raw ? best->rate_bps : best->rate_bps - best->reserved_bps) : -1;
      if (!best || v > bv || (v == bv && l->id < best->id)) best = l;
    }
    return best;
  };
  OracleAnswer ans;
  for (bool raw : {false, true}) {
    std::optional<PathPlan> best;
    std::vector<std::string> nodes{src};
    std::function<void()> walk = [&] {
      if (nodes.back() == dst) {
        PathPlan p{nodes, {}, 1e300};
        for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
          const auto* l = pick(nodes[i], nodes[i + 1], raw);
          if (!l) return;
          p.links.push_back(l->id);
          p.bottleneck_bps = std::min(p.bottleneck_bps, raw ? l->rate_bps : l->rate_bps - l->reserved_bps);
        }
        auto key = [](const PathPlan& q) { return std::make_tuple(q.hops(), -q.bottleneck_bps, q.nodes, q.links); };
        if (!best || key(p) < key(*best)) best = p;
        return;
      }
      const std::string here = nodes.back();
      for (const auto& n : nbr[here]) {
        if (std::ranges::find(nodes, n) != nodes.end()) continue;
        nodes.push_back(n);
        walk();
        nodes.pop_back();
      }
    };
    walk();
    if (!raw) ans.plan = best;
    else ans.raw_feasible = best.has_value();
  }
  return ans;
}

}  // namespace

TEST_CASE("provisioning assigns every declared link") {
  const auto& m = bundled_model();
  optics::Occupancy occ;
  const auto links = provision_links(m, occ);
  CHECK(links.size() == m.links.size());
  for (const auto& [id, c] : links) CHECK(c.id == id);
}

TEST_CASE("QoS validation") {
  CHECK_NOTHROW(validate(QoS{}));
  CHECK(code_of([] { validate(QoS{32, 0, 10}); }) == Errc::invalid_argument);
  CHECK(code_of([] { validate(QoS{32, 20, 10}); }) == Errc::invalid_argument);
  CHECK(code_of([] { validate(QoS{0, 1, 10}); }) == Errc::invalid_argument);
  QoS q;
  q.diversity = 3;
  CHECK(code_of([&] { validate(q); }) == Errc::invalid_argument);
}

TEST_CASE("registration over the bus") {
  Bench b(false);
  for (auto& a : b.agents) a->start();
  b.bus.pump();
  for (const auto& n : b.model.nodes) CHECK(b.ctl.is_registered(n.id));
  CHECK(b.ctl.network_status().nodes.size() == 9);

  auto d = b.agents.front()->descriptor();
  CHECK(d.interfaces == std::set<std::string>{"004", "014"});
  CHECK(code_of([&] { b.ctl.register_node(d); }) == Errc::duplicate_registration);
  d.node = "Atlantis";
  CHECK(code_of([&] { b.ctl.register_node(d); }) == Errc::unknown_node);
}

TEST_CASE("descriptor must match the scenario") {
  Bench b(false);
  auto d = b.agents.front()->descriptor();
  d.modules.push_back("hw-ghost");
  CHECK(code_of([&] { b.ctl.register_node(d); }) == Errc::invariant_violation);
  CHECK_FALSE(b.ctl.is_registered(d.node));
}

TEST_CASE("paths need both endpoints registered") {
  Bench b(false);
  CHECK(code_of([&] { b.ctl.compute_path("Quintin", "Norte", QoS{}); }) == Errc::unknown_node);
}

TEST_CASE("minimum-hop path across the border") {
  Bench b;
  auto p = b.ctl.compute_path("Quintin", "Norte", QoS{});
  REQUIRE(p.size() == 1);
  CHECK(p[0].nodes == std::vector<std::string>{"Quintin", "Quijote", "Quevedo", "Norte"});
  CHECK(p[0].hops() == 3);
  // hw links out-rate the idq links on the same spans.
  CHECK(p[0].links == std::vector<std::string>{"hw-qq", "hw-qjqv", "hw-qvn"});
}

TEST_CASE("isolated node has no feasible path") {
  Bench b;
  CHECK(code_of([&] { b.ctl.compute_path("Quiron", "Norte", QoS{}); }) == Errc::no_feasible_path);
  CHECK(code_of([&] { b.ctl.open_connect("appR", "appB", QoS{}); }) == Errc::no_feasible_path);
}

TEST_CASE("co-located endpoints need no path") {
  Bench b;
  auto p = b.ctl.compute_path("Norte", "Norte", QoS{});
  REQUIRE(p.size() == 1);
  CHECK(p[0].hops() == 0);
}

TEST_CASE("admission: four quarter-rate sessions fit, the fifth is rejected") {
  Bench b;
  const double rate = b.ctl.link("tsh-qnqt").rate_bps;
  CHECK(rate == doctest::Approx(4406.272865059843).epsilon(1e-12));
  QoS q{32, rate / 4, rate};
  for (int i = 0; i < 4; ++i) CHECK_NOTHROW(b.ctl.open_connect("appD", "appC", q));
  CHECK(b.ctl.link("tsh-qnqt").reserved_bps == doctest::Approx(rate));
  CHECK(code_of([&] { b.ctl.open_connect("appD", "appC", q); }) == Errc::admission_rejected);
  // A request larger than the raw rate is a path problem, not an admission one.
  Bench fresh;
  QoS big{32, rate * 2, rate * 2};
  CHECK(code_of([&] { fresh.ctl.open_connect("appD", "appC", big); }) == Errc::no_feasible_path);
}

TEST_CASE("close releases the reservation and reports accounting") {
  Bench b;
  const double rate = b.ctl.link("tsh-qnqt").rate_bps;
  QoS q{32, rate / 2, rate};
  auto s1 = b.ctl.open_connect("appD", "appC", q, 1.0, "s1");
  b.ctl.open_connect("appD", "appC", q);
  CHECK(code_of([&] { b.ctl.open_connect("appD", "appC", q); }) == Errc::admission_rejected);
  b.ctl.session_mut(s1).delivered_chunks = 3;
  b.ctl.session_mut(s1).delivered_bytes = 96;
  auto acc = b.ctl.close(s1);
  CHECK(acc.label == "s1");
  CHECK(acc.final_state == SessionState::closed);
  CHECK(acc.delivered_chunks == 3);
  CHECK(acc.delivered_bytes == 96);
  CHECK(b.ctl.link("tsh-qnqt").reserved_bps == doctest::Approx(rate / 2));
  CHECK_NOTHROW(b.ctl.open_connect("appD", "appC", q));
  CHECK(code_of([&] { b.ctl.close(s1); }) == Errc::session_closed);
  CHECK(code_of([&] { b.ctl.close(Id128{}); }) == Errc::unknown_session);
}

TEST_CASE("hop configuration reaches both ends of every hop") {
  Bench b;
  auto id = b.ctl.open_connect("appA", "appB", QoS{});
  CHECK(b.ctl.session(id).state == SessionState::active);
  const auto hops = b.ctl.hop_configs(id);
  CHECK(hops.size() == 6);
  for (const auto& a : b.agents) {
    const bool on_path = a->node() == "Quintin" || a->node() == "Quijote" || a->node() == "Quevedo" ||
                         a->node() == "Norte";
    CHECK(a->hops().contains(id) == on_path);
    if (on_path) {
      const auto& mine = a->hops().at(id);
      const auto expected = (a->node() == "Quintin" || a->node() == "Norte") ? 1u : 2u;
      CHECK(mine.size() == expected);
      for (const auto& h : mine) CHECK(h.wavelength == b.links.at(h.link).channel);
    }
  }
}

TEST_CASE("attenuation mismatch beyond 1 dB fails configuration") {
  Bench b;
  b.ctl.set_attenuation_bias("hw-qjqv", 0.9);
  CHECK_NOTHROW(b.ctl.open_connect("appA", "appB", QoS{}));
  Bench c;
  c.ctl.set_attenuation_bias("hw-qjqv", 1.1);
  Error err(Errc::io_error, "");
  try {
    c.ctl.open_connect("appA", "appB", QoS{}, 0, "bad");
  } catch (const Error& e) {
    err = e;
  }
  CHECK(err.code() == Errc::configuration_failed);
  CHECK(std::string(err.what()).find("Quijote") != std::string::npos);
  REQUIRE(c.ctl.sessions().size() == 1);
  CHECK(c.ctl.sessions().begin()->second.state == SessionState::failed);
  for (const auto& [id, l] : c.ctl.links()) CHECK(l.reserved_bps == 0);
  for (const auto& a : c.agents) CHECK(a->hops().empty());
}

TEST_CASE("rate change degrades and a dead link fails sessions") {
  Bench b;
  auto id = b.ctl.open_connect("appD", "appC", QoS{});
  b.ctl.update_link("tsh-qnqt", b.rates.at("tsh-qnqt"), 0.02);
  CHECK_FALSE(b.ctl.session(id).degraded);
  b.ctl.update_link("tsh-qnqt", 1000, 0.03);
  CHECK(b.ctl.session(id).degraded);
  CHECK(b.ctl.session(id).state == SessionState::active);
  b.ctl.update_link("tsh-qnqt", 0, 0.5);
  CHECK(b.ctl.session(id).state == SessionState::failed);
  CHECK(b.ctl.link("tsh-qnqt").reserved_bps == 0);
  CHECK(code_of([&] { b.ctl.compute_path("Quijano", "Quinto", QoS{}); }) == Errc::no_feasible_path);
}

TEST_CASE("pool reports reach the controller") {
  Bench b;
  auto& quijano = *b.agents[7];
  REQUIRE(quijano.node() == "Quijano");
  quijano.store().ingest(qkdsim::KeyBlock{Id128::from_hex("000102030405060708090a0b0c0d0e0f"), "tsh-qnqt", "Quijano", "Quinto", "Toshiba", "Toshiba",
                                          Bytes(64, 1), 0, netmodel::KeyMode::distilled});
  quijano.report({{"tsh-qnqt", {1234.5, 0.03}}});
  b.bus.pump();
  CHECK(b.ctl.link("tsh-qnqt").rate_bps == 1234.5);
  CHECK(b.ctl.network_status().pools.at("Quijano").at("Quinto") == 64);
}

TEST_CASE("diversity 2 yields link-disjoint paths") {
  Bench b;
  QoS q;
  q.diversity = 2;
  auto paths = b.ctl.compute_path("Quintin", "Norte", q);
  REQUIRE(paths.size() == 2);
  for (const auto& l : paths[0].links) CHECK(std::ranges::find(paths[1].links, l) == paths[1].links.end());
  CHECK(paths[0].nodes.front() == "Quintin");
  CHECK(paths[1].nodes.back() == "Norte");
  auto id = b.ctl.open_connect("appA", "appB", q);
  CHECK(b.ctl.session(id).stream_tags.size() == 2);
  // Quinto hangs off a single link: no disjoint pair exists.
  CHECK(code_of([&] { b.ctl.compute_path("Quijano", "Quinto", q); }) == Errc::no_feasible_path);
}

TEST_CASE("path selection agrees with a brute-force oracle") {
  std::mt19937_64 rng(11);
  std::vector<std::string> nodes;
  for (const auto& n : bundled_model().nodes) nodes.push_back(n.id);
  std::size_t agreed = 0;
  for (int round = 0; round < 40; ++round) {
    Bench b;
    std::uniform_real_distribution<double> scale(0.0, 1.2);
    for (const auto& [id, r] : b.rates) {
      // Some links die, some tie exactly.
      const int mode = static_cast<int>(rng() % 6);
      b.ctl.update_link(id, mode == 0 ? 0.0 : mode == 1 ? 2000.0 : r * scale(rng), 0.02);
    }
    for (int k = 0; k < 30; ++k) {
      const auto& a = nodes[rng() % nodes.size()];
      const auto& z = nodes[rng() % nodes.size()];
      if (a == z) continue;
      QoS q{32, 100.0 + static_cast<double>(rng() % 1500), 5000};
      const auto want = brute_force(b.ctl, a, z, q.min_bps);
      try {
        auto got = b.ctl.compute_path(a, z, q);
        REQUIRE(want.plan);
        CHECK(got[0] == *want.plan);
        CHECK(got[0].bottleneck_bps == doctest::Approx(want.plan->bottleneck_bps));
        // Reserve along it to shape later queries.
        if (rng() % 2) {
          const auto& apps = bundled_model().apps;
          auto sa = std::ranges::find_if(apps, [&](auto& p) { return p.node == a; });
          auto sz = std::ranges::find_if(apps, [&](auto& p) { return p.node == z; });
          if (sa != apps.end() && sz != apps.end()) {
            b.ctl.open_connect(sa->id, sz->id, q);
          }
        }
      } catch (const Error& e) {
        CHECK_FALSE(want.plan);
        CHECK(e.code() == (want.raw_feasible ? Errc::admission_rejected : Errc::no_feasible_path));
      }
      ++agreed;
    }
  }
  CHECK(agreed > 500);
}

TEST_CASE("snapshot and restore reproduce the session table") {
  Bench b;
  auto s1 = b.ctl.open_connect("appA", "appB", QoS{32, 512, 2048}, 2, "s1");
  auto s2 = b.ctl.open_connect("appC", "appD", QoS{}, 2, "s2");
  b.ctl.session_mut(s2).consumed_per_link["tsh-qnqt"] = 77;
  b.ctl.close(s2);
  const auto snap = b.ctl.snapshot();

  Bench r(false);
  for (auto& a : r.agents) a->start();
  r.bus.pump();
  r.ctl.restore(snap);
  CHECK(r.ctl.sessions() == b.ctl.sessions());
  for (const auto& [id, l] : b.ctl.links()) {
    CHECK(r.ctl.link(id).reserved_bps == doctest::Approx(l.reserved_bps));
    CHECK(r.ctl.link(id).rate_bps == l.rate_bps);
  }
  CHECK(r.ctl.snapshot() == snap);
  // New ids continue the sequence instead of colliding.
  auto s3 = r.ctl.open_connect("appA", "appB", QoS{});
  CHECK(s3 != s1);
  CHECK(s3 != s2);
  CHECK(s3 == b.ctl.open_connect("appA", "appB", QoS{}));
}

TEST_CASE("duplicate delivery does not change outcomes") {
  auto run = [](std::size_t dup_every) {
    const auto& model = bundled_model();
    optics::Occupancy occ;
    auto links = provision_links(model, occ);
    MessageBus bus;
    bus.set_duplicate_every(dup_every);
    std::ostringstream trace;
    bus.set_trace(&trace);
    Controller ctl(model, links, &bus, 5);
    std::vector<std::unique_ptr<Agent>> agents;
    for (const auto& n : model.nodes) agents.push_back(std::make_unique<Agent>(model, n.id, links, &bus, 5));
    for (auto& a : agents) a->start();
    bus.pump();
    for (auto& a : agents) {
      std::map<std::string, std::pair<double, double>> mine;
      for (const auto& [id, c] : links) {
        auto [x, y] = model.link_nodes(id);
        if (x == a->node()) mine[id] = {qkdsim::make_link_state(model, id, c, 5).current_rate_bps, 0.02};
      }
      a->report(mine);
    }
    bus.pump();
    auto id = ctl.open_connect("appA", "appB", QoS{});
    ctl.close(id);
    std::map<std::string, std::size_t> hops;
    for (const auto& a : agents) hops[a->node()] = a->handled();
    return std::make_tuple(ctl.snapshot(), trace.str(), hops);
  };
  const auto [snap1, trace1, handled1] = run(0);
  const auto [snap3, trace3, handled3] = run(3);
  CHECK(snap1 == snap3);
  CHECK(trace1 == trace3);
  CHECK(handled1 == handled3);
  // The trace decodes back to the sent messages.
  const Bytes raw(trace1.begin(), trace1.end());
  const auto msgs = read_trace(raw);
  CHECK(msgs.size() > 9);
  CHECK(msgs.front().kind == MsgKind::REGISTER);
  CHECK(msgs.front().id == 1);
}

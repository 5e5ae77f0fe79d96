#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "qkdnet/error.hpp"
#include "qkdnet/simulation.hpp"

using namespace qkdnet;
using namespace qkdnet::sim;
using control::QoS;
using control::SessionState;
using qkdnet::testing::bundled_model;

namespace {

netmodel::NetworkModel without_workload() {
  auto m = bundled_model();
  m.workload.clear();
  return m;
}

void check_symmetric(Simulation& sim, const Id128& id) {
  auto* buf = sim.buffer(id);
  REQUIRE(buf);
  for (const auto& c : buf->chunks) CHECK(c.at_src == c.at_dst);
}

void check_audits(Simulation& sim) {
  for (const auto& n : sim.model().nodes) {
    const auto report = sim.agent(n.id).store().audit();
    CHECK_MESSAGE(report.ok, n.id);
    CHECK(report.ingested == report.available + report.consumed);
  }
}

}  // namespace

TEST_CASE("bundled workload runs as scripted") {
  Simulation sim(bundled_model(), SimConfig{7});
  sim.run_for(60);
  CHECK(sim.tick() == 60);
  const auto& r = sim.workload_results();
  REQUIRE(r.size() == 6);
  for (const auto& w : r) CHECK_MESSAGE(w.met, w.verb, " ", w.label, " -> ", w.outcome, " ", w.detail);
  CHECK(r[3].outcome == "no_feasible_path");
  CHECK(sim.workload_ok());

  for (const char* label : {"s1", "s3"}) {
    auto id = sim.find_label(label);
    REQUIRE(id);
    const auto& s = sim.controller().session(*id);
    CHECK(s.state == SessionState::active);
    CHECK(s.delivered_chunks > 0);
    check_symmetric(sim, *id);
  }
  const auto& s2 = sim.controller().session(*sim.find_label("s2"));
  CHECK(s2.state == SessionState::closed);
  CHECK(sim.buffer(s2.id) == nullptr);
  check_audits(sim);
}

TEST_CASE("delivery keeps up with max_bps when link key suffices") {
  Simulation sim(without_workload(), SimConfig{1});
  sim.run_for(5);
  QoS q{32, 256, 1024};
  auto id = sim.open("appD", "appC", q, "x");
  sim.run_for(20);
  // 1024 b/s = 128 B/s = 4 chunks per tick.
  CHECK(sim.controller().session(id).delivered_chunks == 80);
  const auto& consumed = sim.controller().session(id).consumed_per_link;
  CHECK(consumed.at("tsh-qnqt") == 80 * (32 + 32));
  check_symmetric(sim, id);
  check_audits(sim);
}

TEST_CASE("delivered material matches at both endpoints on every route") {
  Simulation sim(without_workload(), SimConfig{2});
  sim.run_for(10);
  std::vector<Id128> ids;
  ids.push_back(sim.open("appA", "appC", QoS{16, 128, 512}));
  ids.push_back(sim.open("appF", "appE", QoS{}));
  ids.push_back(sim.open("appE", "appA", QoS{64, 256, 2048}));
  sim.run_for(30);
  for (const auto& id : ids) {
    CHECK(sim.controller().session(id).delivered_chunks > 0);
    check_symmetric(sim, id);
  }
  check_audits(sim);
}

TEST_CASE("co-located endpoints are served locally") {
  auto m = without_workload();
  m.apps.push_back(netmodel::Application{"appB2", "Norte", "sae", ""});
  netmodel::validate(m);
  Simulation sim(m, SimConfig{3});
  auto id = sim.open("appB", "appB2", QoS{});
  sim.run_for(3);
  CHECK(sim.controller().session(id).paths.front().hops() == 0);
  CHECK(sim.controller().session(id).delivered_chunks == 12);
  CHECK(sim.controller().session(id).consumed_per_link.empty());
  check_symmetric(sim, id);
}

TEST_CASE("diversity combines two streams") {
  Simulation sim(without_workload(), SimConfig{4});
  sim.run_for(5);
  QoS q;
  q.diversity = 2;
  auto id = sim.open("appA", "appB", q);
  sim.run_for(10);
  const auto& s = sim.controller().session(id);
  REQUIRE(s.paths.size() == 2);
  CHECK(s.delivered_chunks > 0);
  for (const auto& p : s.paths) {
    for (const auto& l : p.links) CHECK(s.consumed_per_link.at(l) == s.delivered_chunks * (32 + 32));
  }
  check_symmetric(sim, id);
  check_audits(sim);
}

TEST_CASE("power change degrades, link failure fails") {
  auto m = without_workload();
  m.workload = {{3, "set_power", {"tsh-qnqt", "12"}, {}, 1}, {6, "fail", {"tsh-qnqt"}, {}, 2}};
  netmodel::validate(m);
  Simulation sim(m, SimConfig{5});
  auto id = sim.open("appD", "appC", QoS{}, "x");
  sim.run_for(4);
  CHECK(sim.controller().session(id).degraded);
  CHECK(sim.controller().session(id).state == SessionState::active);
  CHECK(sim.controller().link("tsh-qnqt").rate_bps < 4406.272865059843);
  sim.run_for(3);
  CHECK(sim.controller().session(id).state == SessionState::failed);
  CHECK(sim.buffer(id) == nullptr);
  CHECK_THROWS_AS(sim.open("appD", "appC", QoS{}), Error);
}

TEST_CASE("ttl closes sessions") {
  Simulation sim(without_workload(), SimConfig{6});
  QoS q;
  q.ttl_s = 5;
  auto id = sim.open("appD", "appC", q);
  sim.run_for(4);
  CHECK(sim.controller().session(id).state == SessionState::active);
  sim.run_for(1);
  CHECK(sim.controller().session(id).state == SessionState::closed);
}

TEST_CASE("workload expectations are checked") {
  auto m = without_workload();
  m.workload = {{0, "open", {"appR", "appB"}, {{"as", "bad"}}, 1},
                {0, "close", {"nope"}, {{"expect", "unknown_session"}}, 2}};
  Simulation sim(m, SimConfig{});
  sim.advance();
  REQUIRE(sim.workload_results().size() == 2);
  CHECK_FALSE(sim.workload_results()[0].met);
  CHECK(sim.workload_results()[0].outcome == "no_feasible_path");
  CHECK(sim.workload_results()[1].met);
  CHECK_FALSE(sim.workload_ok());
}

TEST_CASE("QoS options from workload text") {
  auto q = qos_from_options({{"min_bps", "512"}, {"chunk", "16"}, {"diversity", "2"}, {"as", "s1"}});
  CHECK(q.min_bps == 512);
  CHECK(q.max_bps == 1024);
  CHECK(q.key_chunk_size == 16);
  CHECK(q.diversity == 2);
  CHECK(qos_from_options({{"min_bps", "4096"}}).max_bps == 4096);
  CHECK_THROWS_AS(qos_from_options({{"min_bps", "fast"}}), Error);
  CHECK_THROWS_AS(qos_from_options({{"min_bps", "0"}}), Error);
}

TEST_CASE("tick must be positive") {
  SimConfig c;
  c.tick_s = 0;
  CHECK_THROWS_AS(Simulation(without_workload(), c), Error);
}

TEST_CASE("same seed, same bytes") {
  auto run = [](std::uint64_t seed) {
    std::ostringstream metrics, trace, relay;
    SimConfig c{seed, 1.0, &metrics, &trace, &relay};
    Simulation sim(bundled_model(), c);
    sim.run_for(30);
    sim.close_all();
    sim.bus().pump();
    return std::make_tuple(metrics.str(), trace.str(), relay.str());
  };
  const auto a = run(7);
  const auto b = run(7);
  const auto c = run(8);
  CHECK(a == b);
  CHECK(std::get<1>(a) != std::get<1>(c));
  CHECK(std::get<0>(a).starts_with("tick,link_id,rate_bps,qber,bytes_emitted\n"));
  CHECK_FALSE(std::get<2>(a).empty());
  // One metrics row per link per tick.
  const auto rows = std::ranges::count(std::get<0>(a), '\n');
  CHECK(rows == 1 + 30 * 12);
}

TEST_CASE("late sessions still receive their reserved rate") {
  Simulation sim(without_workload(), SimConfig{9});
  sim.run_for(5);
  // Both early sessions cross hw-qvn at max_bps, which alone nearly fills it.
  sim.open("appA", "appB", QoS{32, 256, 4096});
  sim.open("appC", "appF", QoS{32, 256, 4096});
  sim.run_for(40);
  auto late = sim.open("appB", "appA", QoS{32, 256, 1024});
  sim.run_for(40);
  // 256 b/s is one 32-byte chunk per tick.
  CHECK(sim.controller().session(late).delivered_chunks >= 40);
  check_symmetric(sim, late);
  check_audits(sim);
}

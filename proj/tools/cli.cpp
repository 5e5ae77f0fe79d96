#include "cli.hpp"

#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "qkdnet/error.hpp"
#include "qkdnet/netmodel.hpp"
#include "qkdnet/northbound.hpp"
#include "qkdnet/reports.hpp"
#include "qkdnet/simulation.hpp"

namespace qkdnet::cli {

namespace {

struct Options {
  std::string scenario;
  std::uint64_t seed = 0;
  double duration_s = 60.0;
  double tick_s = 1.0;
  std::string report;
  std::string metrics;
  std::string trace;
  std::string relay;
  std::string bind = "127.0.0.1:8014";
  double speed = 1.0;
  std::string clock = "realtime";
  std::string kind;
};

void setup_logging(std::ostream& err) {
  auto logger = std::make_shared<spdlog::logger>("qkdnet", std::make_shared<spdlog::sinks::ostream_sink_mt>(err));
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("QKDNET_LOG")) {
    // from_str maps anything unknown to off; keep the default instead.
    const auto parsed = spdlog::level::from_str(env);
    if (parsed != spdlog::level::off || std::string_view(env) == "off") level = parsed;
  }
  logger->set_level(level);
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot read '{}'", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(data.data(), static_cast<std::streamsize>(data.size()))) {
    throw Error(Errc::io_error, fmt::format("cannot write '{}'", path));
  }
}

std::vector<std::uint8_t> as_bytes(const std::string& s) { return {s.begin(), s.end()}; }

int do_run(const Options& o, std::ostream& out) {
  const auto kinds = reports::parse_list(o.report);
  const auto model = netmodel::load_scenario_file(o.scenario);
  spdlog::info("loaded {}: {} nodes, {} links", o.scenario, model.nodes.size(), model.links.size());

  std::ostringstream metrics, trace, relay;
  sim::SimConfig config{o.seed, o.tick_s, o.metrics.empty() ? nullptr : &metrics, &trace,
                        o.relay.empty() ? nullptr : &relay};
  sim::Simulation sim(model, config);
  sim.run_for(o.duration_s);
  sim.close_all();
  sim.bus().pump();

  bool ok = true;
  for (const auto& r : sim.workload_results()) {
    if (r.met) continue;
    ok = false;
    spdlog::error("workload line {} ({} {}): expected {}, got {} {}", r.line, r.verb, r.label, r.expect, r.outcome,
                  r.detail);
  }
  if (!o.metrics.empty()) write_file(o.metrics, metrics.str());
  if (!o.trace.empty()) write_file(o.trace, trace.str());
  if (!o.relay.empty()) write_file(o.relay, relay.str());

  const auto trace_bytes = as_bytes(trace.str());
  for (const auto& k : kinds) out << reports::render(k, model, &trace_bytes);
  out.flush();
  return ok ? kOk : kWorkloadFailure;
}

int do_report(const Options& o, std::ostream& out) {
  const auto model = netmodel::load_scenario_file(o.scenario);
  std::optional<std::vector<std::uint8_t>> trace;
  if (!o.trace.empty()) trace = read_file(o.trace);
  out << reports::render(o.kind, model, trace ? &*trace : nullptr);
  out.flush();
  return kOk;
}

std::pair<std::string, int> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::invalid_argument, fmt::format("bad bind address '{}'", bind));
  int port = 0;
  try {
    port = std::stoi(bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(Errc::invalid_argument, fmt::format("bad bind address '{}'", bind));
  }
  if (port < 0 || port > 65535) throw Error(Errc::invalid_argument, fmt::format("bad port in '{}'", bind));
  return {bind.substr(0, colon), port};
}

int do_serve(const Options& o, std::ostream& out) {
  const auto [host, port] = split_bind(o.bind);
  const auto model = netmodel::load_scenario_file(o.scenario);

  std::ofstream metrics, trace;
  if (!o.metrics.empty()) metrics.open(o.metrics, std::ios::binary | std::ios::trunc);
  if (!o.trace.empty()) trace.open(o.trace, std::ios::binary | std::ios::trunc);
  if ((!o.metrics.empty() && !metrics) || (!o.trace.empty() && !trace)) {
    throw Error(Errc::io_error, "cannot open output files");
  }
  // Keep a copy of the trace for the shutdown accounting.
  std::ostringstream trace_copy;
  sim::SimConfig config{o.seed, o.tick_s, o.metrics.empty() ? nullptr : &metrics, &trace_copy};
  sim::Simulation sim(model, config);
  northbound::ServiceConfig sc;
  sc.seed = o.seed;
  const bool live = o.clock == "realtime";
  northbound::KeyService service(sim, sc, live);
  northbound::HttpServer server(service);

  const int bound = server.bind(host, port);

  // Threads started below inherit the mask; one of them waits for the signal.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  out << fmt::format("listening on http://{}:{}\n", host, bound);
  out.flush();
  spdlog::info("serving {} ({} clock)", o.scenario, o.clock);

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {}, shutting down", sig);
    server.stop();
  });
  waiter.detach();

  northbound::RealtimeClock clock(sim, o.speed);
  if (live) clock.start();
  server.listen();
  clock.stop();

  service.shutdown();
  {
    std::lock_guard lock(sim.mutex());
    sim.close_all();
    sim.bus().pump();
  }
  if (metrics.is_open()) metrics.flush();
  if (trace.is_open()) trace << trace_copy.str() << std::flush;
  out << reports::sessions(as_bytes(trace_copy.str()));
  out.flush();
  return kOk;
}

int exit_code(Errc code) {
  switch (code) {
    case Errc::invalid_argument:
      return kUsage;
    default:
      return kScenarioError;
  }
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  setup_logging(err);
  Options o;
  CLI::App app{"Discrete-event simulator and control plane for a QKD network"};
  app.require_subcommand(1);

  auto positive = CLI::PositiveNumber;
  auto* run = app.add_subcommand("run", "run a scenario for a fixed duration and print reports");
  run->add_option("--scenario", o.scenario, "scenario file")->required();
  run->add_option("--seed", o.seed, "random seed");
  run->add_option("--duration", o.duration_s, "simulated seconds")->check(positive);
  run->add_option("--tick", o.tick_s, "seconds per step")->check(positive);
  run->add_option("--report", o.report, "comma-separated: summary,coexistence,connectivity,sessions");
  run->add_option("--metrics", o.metrics, "per-link CSV metrics output");
  run->add_option("--trace", o.trace, "controller-agent trace output");
  run->add_option("--relay", o.relay, "relay wire records output");

  auto* report = app.add_subcommand("report", "print one report for a scenario");
  report->add_option("kind", o.kind, "summary, coexistence, connectivity or sessions")
      ->required()
      ->check(CLI::IsMember(reports::kinds()));
  report->add_option("--scenario", o.scenario, "scenario file")->required();
  report->add_option("--trace", o.trace, "trace of a previous run (sessions)");

  auto* serve = app.add_subcommand("serve", "run the simulation in real time behind the key delivery API");
  serve->add_option("--scenario", o.scenario, "scenario file")->required();
  serve->add_option("--seed", o.seed, "random seed");
  serve->add_option("--tick", o.tick_s, "seconds per step")->check(positive);
  serve->add_option("--speed", o.speed, "simulated seconds per wall-clock second")->check(positive);
  serve->add_option("--clock", o.clock,
                    "realtime, or on-demand: time only advances while a request waits for key")
      ->check(CLI::IsMember({"realtime", "on-demand"}));
  serve->add_option("--bind", o.bind, "HOST:PORT; port 0 picks a free one");
  serve->add_option("--metrics", o.metrics, "per-link CSV metrics output");
  serve->add_option("--trace", o.trace, "controller-agent trace output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o_out, o_err;
    const int code = app.exit(e, o_out, o_err);
    out << o_out.str();
    err << o_err.str();
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return do_run(o, out);
    if (*report) return do_report(o, out);
    return do_serve(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kScenarioError;
  }
}

}  // namespace qkdnet::cli

#include "qkdnet/simulation.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "qkdnet/error.hpp"

namespace qkdnet::sim {

using control::QoS;
using control::ServiceSession;
using control::SessionState;

namespace {

double number(const std::map<std::string, std::string>& o, const char* key, double fallback) {
  auto it = o.find(key);
  if (it == o.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::invalid_argument, fmt::format("option {}={} is not a number", key, it->second));
  }
}

}  // namespace

QoS qos_from_options(const std::map<std::string, std::string>& o) {
  QoS q;
  q.min_bps = number(o, "min_bps", q.min_bps);
  q.max_bps = number(o, "max_bps", std::max(q.max_bps, q.min_bps));
  q.key_chunk_size = static_cast<std::size_t>(number(o, "chunk", static_cast<double>(q.key_chunk_size)));
  q.diversity = static_cast<int>(number(o, "diversity", q.diversity));
  q.ttl_s = number(o, "ttl", q.ttl_s);
  q.priority = static_cast<int>(number(o, "priority", q.priority));
  q.timeout_ms = static_cast<int>(number(o, "timeout_ms", q.timeout_ms));
  control::validate(q);
  return q;
}

Simulation::Simulation(netmodel::NetworkModel model, SimConfig config) : model_(std::move(model)), config_(config) {
  if (!(config_.tick_s > 0)) throw Error(Errc::invalid_argument, "tick must be positive");
  optics::Occupancy occ;
  connections_ = control::provision_links(model_, occ);
  for (const auto& l : model_.links) {
    links_.push_back(qkdsim::make_link_state(model_, l.id, connections_.at(l.id), config_.seed));
  }
  bus_.set_trace(config_.trace);
  controller_ = std::make_unique<control::Controller>(model_, connections_, &bus_, config_.seed);
  for (const auto& n : model_.nodes) {
    agents_.emplace(n.id, std::make_unique<control::Agent>(model_, n.id, connections_, &bus_, config_.seed));
    local_.emplace(n.id, KeyStream(config_.seed, "local:" + n.id));
  }
  if (config_.metrics) *config_.metrics << qkdsim::metrics_csv_header() << '\n';
  for (const auto& n : model_.nodes) agents_.at(n.id)->start();
  bus_.pump();
  for (const auto& n : model_.nodes) {
    std::map<std::string, std::pair<double, double>> mine;
    for (const auto& s : links_) {
      if (s.src_node == n.id) mine[s.link_id] = {s.current_rate_bps, s.current_qber};
    }
    agents_.at(n.id)->report(mine);
  }
  bus_.pump();
}

control::Agent& Simulation::agent(const std::string& node) {
  auto it = agents_.find(node);
  if (it == agents_.end()) throw Error(Errc::unknown_node, fmt::format("unknown node '{}'", node));
  return *it->second;
}

qkdsim::QkdLinkState& Simulation::link(const std::string& id) {
  auto it = std::ranges::find(links_, id, &qkdsim::QkdLinkState::link_id);
  if (it == links_.end()) throw Error(Errc::unknown_entity, fmt::format("unknown link '{}'", id));
  return *it;
}

void Simulation::advance() {
  run_workload();

  for (auto& s : links_) {
    std::size_t bytes = 0;
    if (s.active) {
      auto out = qkdsim::step(s, config_.tick_s);
      bytes = out.bytes;
      if (out.at_src) agents_.at(s.src_node)->store().ingest(*out.at_src);
      if (out.at_dst) agents_.at(s.dst_node)->store().ingest(*out.at_dst);
    }
    if (config_.metrics) {
      *config_.metrics << qkdsim::metrics_csv_row({tick_, s.link_id, s.active ? s.current_rate_bps : 0.0,
                                                   s.current_qber, bytes})
                       << '\n';
    }
  }

  for (const auto& n : model_.nodes) {
    std::map<std::string, std::pair<double, double>> mine;
    for (const auto& s : links_) {
      if (s.src_node == n.id) mine[s.link_id] = {s.active ? s.current_rate_bps : 0.0, s.current_qber};
    }
    agents_.at(n.id)->report(mine);
  }
  bus_.pump();

  const double end = static_cast<double>(tick_ + 1) * config_.tick_s;
  std::vector<Id128> expired;
  for (const auto& [id, s] : controller_->sessions()) {
    if (s.state == SessionState::active && s.qos.ttl_s > 0 && end - s.opened_at >= s.qos.ttl_s) expired.push_back(id);
  }
  for (const auto& id : expired) close(id);

  std::vector<ServiceSession*> order;
  for (const auto& [id, s] : controller_->sessions()) {
    if (s.state == SessionState::active && buffers_.contains(id)) order.push_back(&controller_->session_mut(id));
  }
  std::ranges::stable_sort(order, [](const ServiceSession* a, const ServiceSession* b) {
    return std::tie(b->qos.priority, a->opened_at) < std::tie(a->qos.priority, b->opened_at);
  });
  // Reserved min_bps is served to every session before anyone gets more.
  for (auto* s : order) forward(*s, buffers_.at(s->id), true);
  for (auto* s : order) forward(*s, buffers_.at(s->id), false);
  bus_.pump();
  ++tick_;
}

void Simulation::run_for(double seconds) {
  const auto steps = static_cast<std::uint64_t>(std::llround(seconds / config_.tick_s));
  for (std::uint64_t i = 0; i < steps; ++i) advance();
}

Id128 Simulation::open(const std::string& src_app, const std::string& dst_app, const QoS& qos, std::string label) {
  if (!label.empty() && labels_.contains(label)) {
    throw Error(Errc::invalid_argument, fmt::format("session label '{}' already used", label));
  }
  const Id128 id = controller_->open_connect(src_app, dst_app, qos, now(), label);
  buffers_[id];
  if (!label.empty()) labels_[label] = id;
  return id;
}

control::Accounting Simulation::close(const Id128& session) {
  auto acc = controller_->close(session);
  // Undelivered chunks are destroyed with the buffer.
  buffers_.erase(session);
  return acc;
}

std::vector<control::Accounting> Simulation::close_all() {
  std::vector<Id128> open;
  for (const auto& [id, s] : controller_->sessions()) {
    if (s.state == SessionState::active) open.push_back(id);
  }
  std::vector<control::Accounting> out;
  for (const auto& id : open) out.push_back(close(id));
  return out;
}

SessionBuffer* Simulation::buffer(const Id128& session) {
  auto it = buffers_.find(session);
  if (it == buffers_.end()) return nullptr;
  if (controller_->session(session).state != SessionState::active) {
    buffers_.erase(it);
    return nullptr;
  }
  return &it->second;
}

std::optional<Id128> Simulation::find_label(const std::string& label) const {
  auto it = labels_.find(label);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

bool Simulation::workload_ok() const {
  return std::ranges::all_of(results_, &WorkloadResult::met);
}

void Simulation::run_workload() {
  const auto& cmds = model_.workload;
  while (next_command_ < cmds.size() && cmds[next_command_].at_s <= now() + 1e-9) execute(cmds[next_command_++]);
}

void Simulation::execute(const netmodel::WorkloadCommand& cmd) {
  WorkloadResult r;
  r.at_s = now();
  r.line = cmd.line;
  r.verb = cmd.verb;
  auto opt = [&](const char* k, std::string fallback) {
    auto it = cmd.options.find(k);
    return it == cmd.options.end() ? fallback : it->second;
  };
  r.label = opt("as", cmd.verb == "open" ? "" : cmd.args.empty() ? "" : cmd.args[0]);
  r.expect = opt("expect", "ok");
  try {
    if (cmd.verb == "open") {
      open(cmd.args.at(0), cmd.args.at(1), qos_from_options(cmd.options), r.label);
    } else if (cmd.verb == "close") {
      auto id = find_label(cmd.args.at(0));
      if (!id) throw Error(Errc::unknown_session, fmt::format("no session labelled '{}'", cmd.args.at(0)));
      close(*id);
    } else if (cmd.verb == "set_mode") {
      const auto& m = cmd.args.at(1);
      if (m != "raw" && m != "distilled") throw Error(Errc::invalid_argument, fmt::format("unknown mode '{}'", m));
      qkdsim::set_mode(link(cmd.args.at(0)), m == "raw" ? netmodel::KeyMode::raw : netmodel::KeyMode::distilled);
    } else if (cmd.verb == "set_power") {
      auto& s = link(cmd.args.at(0));
      qkdsim::set_conditions(s, s.loss_db, number({{"p", cmd.args.at(1)}}, "p", 0));
    } else if (cmd.verb == "fail") {
      link(cmd.args.at(0)).active = false;
    } else {
      throw Error(Errc::invalid_argument, fmt::format("unknown workload verb '{}'", cmd.verb));
    }
    r.outcome = "ok";
  } catch (const Error& e) {
    r.outcome = std::string(to_string(e.code()));
    r.detail = e.what();
  }
  r.met = r.outcome == r.expect;
  results_.push_back(std::move(r));
}

lkms::KeyChunk Simulation::end_key(const std::string& node, std::size_t len) {
  KeyStream& gen = local_.at(node);
  const Id128 id = gen.next_id();
  auto& store = agents_.at(node)->store();
  store.ingest_local(id, gen.bytes(len), tick_);
  return store.reserve(node, len, lkms::kLocalVendor);
}

void Simulation::forward(ServiceSession& s, SessionBuffer& buf, bool reserved) {
  const double chunk = static_cast<double>(s.qos.key_chunk_size);
  if (reserved) {
    const double per_tick = s.qos.max_bps * config_.tick_s / 8.0;
    const double min_tick = s.qos.min_bps * config_.tick_s / 8.0;
    // Unused credit carries over, but never more than one tick plus a chunk.
    buf.credit_bytes = std::min(buf.credit_bytes + per_tick, per_tick + chunk);
    buf.min_credit_bytes = std::min(buf.min_credit_bytes + min_tick, min_tick + chunk);
  }
  while (buf.credit_bytes + 1e-9 >= chunk && buf.chunks.size() < config_.buffer_cap) {
    if (reserved && buf.min_credit_bytes + 1e-9 < chunk) break;
    if (!produce_chunk(s, buf)) break;
    buf.credit_bytes -= chunk;
    buf.min_credit_bytes = std::max(0.0, buf.min_credit_bytes - chunk);
  }
}

bool Simulation::produce_chunk(ServiceSession& s, SessionBuffer& buf) {
  const std::size_t len = s.qos.key_chunk_size;
  DeliveredChunk out;
  out.index = buf.next_index;

  if (s.paths.front().hops() == 0) {
    auto k = end_key(s.src_node, len);
    out.id = k.id();
    out.at_src = k.bytes();
    out.at_dst = k.bytes();
  } else {
    // All-or-nothing across every path: check every hop's pools first.
    std::map<std::tuple<std::string, std::string, std::string>, std::size_t> need;
    std::vector<std::vector<std::optional<std::string>>> vendors;
    for (const auto& p : s.paths) {
      auto& v = vendors.emplace_back();
      for (std::size_t i = 0; i < p.hops(); ++i) {
        const std::string vendor = model_.module(model_.link(p.links[i]).src_module).vendor;
        v.emplace_back(vendor);
        need[{p.nodes[i], p.nodes[i + 1], vendor}] += len + lkms::kAuthKeyBytes;
        need[{p.nodes[i + 1], p.nodes[i], vendor}] += len + lkms::kAuthKeyBytes;
      }
    }
    for (const auto& [k, n] : need) {
      const auto& [node, peer, vendor] = k;
      if (agents_.at(node)->store().available(peer, vendor) < n) return false;
    }

    lkms::ForwardOptions opts;
    if (config_.relay) {
      opts.on_wire = [this](std::size_t, Bytes& wire) {
        config_.relay->write(reinterpret_cast<const char*>(wire.data()), static_cast<std::streamsize>(wire.size()));
      };
    }
    auto store_of = [this](const std::string& n) -> lkms::KeyStore& { return agents_.at(n)->store(); };
    std::vector<lkms::KeyChunk> src_parts;
    std::vector<lkms::KeyChunk> dst_parts;
    for (std::size_t i = 0; i < s.paths.size(); ++i) {
      const auto& p = s.paths[i];
      auto k = end_key(s.src_node, len);
      const Id128 kid = k.id();
      Bytes copy = k.bytes();
      opts.hop_vendor = vendors[i];
      // Pools were checked above; an error here is a relay fault and propagates.
      auto rec = lkms::forward_key(store_of, s.id, p.nodes, std::move(k), opts);
      for (const auto& l : p.links) s.consumed_per_link[l] += rec.consumed_per_hop;
      src_parts.push_back(lkms::KeyChunk::from_bytes(std::move(copy), s.stream_tags[i], kid));
      dst_parts.push_back(lkms::KeyChunk::from_bytes(rec.delivered.bytes(), s.stream_tags[i], kid));
    }
    if (src_parts.size() == 1) {
      out.id = src_parts[0].id();
      out.at_src = src_parts[0].bytes();
      out.at_dst = dst_parts[0].bytes();
    } else {
      auto a = lkms::combine_streams(src_parts);
      auto b = lkms::combine_streams(dst_parts);
      out.id = a.id();
      out.at_src = a.bytes();
      out.at_dst = b.bytes();
    }
  }
  ++buf.next_index;
  ++s.delivered_chunks;
  s.delivered_bytes += len;
  buf.chunks.push_back(std::move(out));
  return true;
}

}  // namespace qkdnet::sim

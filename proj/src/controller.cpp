#include "qkdnet/controller.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

#include "json.hpp"
#include "qkdnet/error.hpp"

namespace qkdnet::control {

using netmodel::NetworkModel;

void validate(const QoS& q) {
  if (!(q.min_bps > 0) || !(q.max_bps >= q.min_bps)) {
    throw Error(Errc::invalid_argument, fmt::format("QoS needs 0 < min_bps <= max_bps (got {} / {})", q.min_bps, q.max_bps));
  }
  if (q.key_chunk_size == 0) throw Error(Errc::invalid_argument, "QoS key_chunk_size must be positive");
  if (q.diversity < 1 || q.diversity > 2) throw Error(Errc::invalid_argument, "QoS diversity must be 1 or 2");
  if (q.ttl_s < 0 || q.timeout_ms < 0) throw Error(Errc::invalid_argument, "QoS timeouts must be non-negative");
}

std::string_view to_string(SessionState state) {
  switch (state) {
    case SessionState::requested: return "requested";
    case SessionState::configured: return "configured";
    case SessionState::active: return "active";
    case SessionState::closed: return "closed";
    case SessionState::failed: return "failed";
  }
  return "?";
}

namespace {

SessionState state_from(std::string_view s) {
  for (auto st : {SessionState::requested, SessionState::configured, SessionState::active, SessionState::closed,
                  SessionState::failed}) {
    if (to_string(st) == s) return st;
  }
  throw Error(Errc::parse_error, fmt::format("unknown session state '{}'", s));
}

std::string join(const std::vector<std::string>& v, std::string_view sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

std::vector<std::string> split(std::string_view s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    out.emplace_back(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool fits(double available, double need) { return available + 1e-9 * std::max(1.0, std::abs(need)) >= need; }

}  // namespace

std::map<std::string, optics::SwitchedConnection> provision_links(const NetworkModel& model,
                                                                   optics::Occupancy& occupancy) {
  std::map<std::string, optics::SwitchedConnection> out;
  for (const auto& l : model.links) {
    try {
      out.emplace(l.id, optics::assign_connection(model, l.src_module, l.dst_module, occupancy,
                                                  model.module(l.src_module).rate.max_loss_db, l.id));
    } catch (const Error& e) {
      throw Error(Errc::configuration_failed, fmt::format("cannot provision link '{}': {}", l.id, e.what()));
    }
  }
  return out;
}

Controller::Controller(const NetworkModel& model, const std::map<std::string, optics::SwitchedConnection>& links,
                       MessageBus* bus, std::uint64_t seed)
    : model_(model), bus_(bus), ids_(seed, "sessions") {
  for (const auto& l : model.links) {
    auto it = links.find(l.id);
    if (it == links.end()) continue;
    auto [a, b] = model.link_nodes(l.id);
    links_.emplace(l.id, LinkView{l.id, a, b, it->second.channel, it->second.total_loss_db, 0, 0, 0, true, false});
  }
  if (bus_) bus_->attach(kControllerAddress, [this](const Message& m) { handle(m); });
}

void Controller::handle(const Message& msg) {
  if (!seen_.insert(msg.id).second) return;
  on_message(msg);
}

void Controller::on_message(const Message& msg) {
  switch (msg.kind) {
    case MsgKind::REGISTER: {
      NodeDescriptor d;
      d.node = msg.at("node");
      d.address = msg.at("address");
      d.modules = split(msg.at("modules"));
      d.links = split(msg.at("links"));
      auto ifs = split(msg.at("interfaces"));
      d.interfaces = {ifs.begin(), ifs.end()};
      register_node(d);
      break;
    }
    case MsgKind::POOL_REPORT: {
      const std::string node = msg.from.starts_with("agent:") ? msg.from.substr(6) : msg.from;
      auto& pools = descriptors_[node].pool_levels;
      for (const auto& [k, v] : msg.fields) {
        if (k.starts_with("pool.")) pools[k.substr(5)] = std::stoull(v);
      }
      for (const auto& [k, v] : msg.fields) {
        if (k.starts_with("link.") && k.ends_with(".rate")) {
          const std::string id = k.substr(5, k.size() - 10);
          update_link(id, std::stod(v), std::stod(msg.at("link." + id + ".qber")));
        }
      }
      break;
    }
    case MsgKind::ALARM: alarms_.push_back(msg); break;
    case MsgKind::CONFIG_HOP:
    case MsgKind::SESSION_CMD: break;
  }
}

void Controller::register_node(const NodeDescriptor& d) {
  const auto* node = model_.find_node(d.node);
  if (!node) throw Error(Errc::unknown_node, fmt::format("node '{}' is not in the scenario", d.node));
  if (registered_.contains(d.node)) {
    throw Error(Errc::duplicate_registration, fmt::format("node '{}' is already registered", d.node));
  }
  auto want = node->hosted_modules;
  auto got = d.modules;
  std::ranges::sort(want);
  std::ranges::sort(got);
  if (want != got) {
    throw Error(Errc::invariant_violation,
                fmt::format("descriptor of '{}' lists modules [{}], scenario has [{}]", d.node, join(got), join(want)));
  }
  registered_.insert(d.node);
  descriptors_[d.node] = d;
  for (auto& [id, l] : links_) l.registered = registered_.contains(l.a) && registered_.contains(l.b);
}

void Controller::update_link(const std::string& id, double rate_bps, double qber) {
  auto it = links_.find(id);
  if (it == links_.end()) throw Error(Errc::unknown_entity, fmt::format("unknown link '{}'", id));
  LinkView& l = it->second;
  const double old = l.rate_bps;
  l.rate_bps = rate_bps;
  l.qber = qber;
  const bool dead = !(rate_bps > 0);
  l.alive = !dead;
  if (old == rate_bps) return;
  for (auto& [sid, s] : sessions_) {
    if (s.state != SessionState::active) continue;
    const bool uses = std::ranges::any_of(s.paths, [&](const PathPlan& p) {
      return std::ranges::find(p.links, id) != p.links.end();
    });
    if (!uses) continue;
    if (dead) {
      fail_session(s, fmt::format("link '{}' stopped producing key", id));
    } else {
      s.degraded = true;
    }
  }
}

std::vector<PathPlan> Controller::compute_path(const std::string& src, const std::string& dst, const QoS& qos) const {
  for (const auto& n : {src, dst}) {
    if (!registered_.contains(n)) throw Error(Errc::unknown_node, fmt::format("node '{}' is not registered", n));
  }
  // Co-located endpoints share one local pool; no relay path is needed.
  if (src == dst) return {PathPlan{{src}, {}, 0}};

  // adjacency: node -> (peer, link) over links admitted by `ok`.
  using Ok = std::function<bool(const LinkView&)>;
  auto adjacency = [&](const Ok& ok) {
    std::map<std::string, std::vector<std::pair<std::string, const LinkView*>>> adj;
    for (const auto& [id, l] : links_) {
      if (!l.registered || !l.alive || !ok(l)) continue;
      adj[l.a].push_back({l.b, &l});
      adj[l.b].push_back({l.a, &l});
    }
    return adj;
  };
  auto value = [&](const LinkView& l, bool raw) { return raw ? l.rate_bps : residual(l); };

  auto path_key = [](const PathPlan& p) { return std::make_tuple(p.hops(), -p.bottleneck_bps, p.nodes, p.links); };

  auto single = [&](bool raw) -> std::optional<PathPlan> {
    auto adj = adjacency([&](const LinkView& l) { return fits(value(l, raw), qos.min_bps); });
    std::map<std::string, int> to_dst{{dst, 0}};
    std::deque<std::string> q{dst};
    while (!q.empty()) {
      auto n = q.front();
      q.pop_front();
      for (const auto& [peer, l] : adj[n]) {
        if (!to_dst.contains(peer)) {
          to_dst[peer] = to_dst[n] + 1;
          q.push_back(peer);
        }
      }
    }
    if (!to_dst.contains(src)) return std::nullopt;
    std::optional<PathPlan> best;
    PathPlan cur{{src}, {}, std::numeric_limits<double>::infinity()};
    std::function<void()> dfs = [&] {
      const std::string here = cur.nodes.back();
      if (here == dst) {
        if (!best || path_key(cur) < path_key(*best)) best = cur;
        return;
      }
      // Best of the parallel links toward each next node.
      std::map<std::string, const LinkView*> next;
      for (const auto& [peer, l] : adj[here]) {
        auto d = to_dst.find(peer);
        if (d == to_dst.end() || d->second != to_dst[here] - 1) continue;
        auto& slot = next[peer];
        if (!slot || value(*l, raw) > value(*slot, raw) || (value(*l, raw) == value(*slot, raw) && l->id < slot->id)) {
          slot = l;
        }
      }
      for (const auto& [peer, l] : next) {
        const double saved = cur.bottleneck_bps;
        cur.nodes.push_back(peer);
        cur.links.push_back(l->id);
        cur.bottleneck_bps = std::min(saved, value(*l, raw));
        dfs();
        cur.nodes.pop_back();
        cur.links.pop_back();
        cur.bottleneck_bps = saved;
      }
    };
    dfs();
    return best;
  };

  auto pair = [&](bool raw) -> std::optional<std::vector<PathPlan>> {
    auto adj = adjacency([&](const LinkView& l) { return fits(value(l, raw), qos.min_bps); });
    std::vector<PathPlan> all;
    PathPlan cur{{src}, {}, std::numeric_limits<double>::infinity()};
    std::function<void()> dfs = [&] {
      const std::string here = cur.nodes.back();
      if (here == dst) {
        all.push_back(cur);
        return;
      }
      for (const auto& [peer, l] : adj[here]) {
        if (std::ranges::find(cur.nodes, peer) != cur.nodes.end()) continue;
        const double saved = cur.bottleneck_bps;
        cur.nodes.push_back(peer);
        cur.links.push_back(l->id);
        cur.bottleneck_bps = std::min(saved, value(*l, raw));
        dfs();
        cur.nodes.pop_back();
        cur.links.pop_back();
        cur.bottleneck_bps = saved;
      }
    };
    dfs();
    std::ranges::sort(all, [&](const PathPlan& a, const PathPlan& b) { return path_key(a) < path_key(b); });
    std::optional<std::tuple<std::size_t, double, std::size_t, std::size_t>> best;
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (std::size_t j = i + 1; j < all.size(); ++j) {
        const bool disjoint = std::ranges::none_of(all[i].links, [&](const std::string& id) {
          return std::ranges::find(all[j].links, id) != all[j].links.end();
        });
        if (!disjoint) continue;
        auto key = std::make_tuple(all[i].hops() + all[j].hops(),
                                   -std::min(all[i].bottleneck_bps, all[j].bottleneck_bps), i, j);
        if (!best || key < *best) best = key;
      }
    }
    if (!best) return std::nullopt;
    return std::vector<PathPlan>{all[std::get<2>(*best)], all[std::get<3>(*best)]};
  };

  auto search = [&](bool raw) -> std::optional<std::vector<PathPlan>> {
    if (qos.diversity == 2) return pair(raw);
    auto p = single(raw);
    if (!p) return std::nullopt;
    return std::vector<PathPlan>{*p};
  };

  if (auto found = search(false)) return *found;
  if (search(true)) {
    throw Error(Errc::admission_rejected,
                fmt::format("admission rejected {} -> {}: reserved capacity leaves less than {} b/s", src, dst,
                            qos.min_bps));
  }
  auto adj = adjacency([](const LinkView&) { return true; });
  std::set<std::string> seen{src};
  std::deque<std::string> q{src};
  while (!q.empty()) {
    auto n = q.front();
    q.pop_front();
    for (const auto& [peer, l] : adj[n]) {
      if (seen.insert(peer).second) q.push_back(peer);
    }
  }
  if (!seen.contains(dst)) {
    throw Error(Errc::no_feasible_path, fmt::format("no feasible path {} -> {}: disconnected", src, dst));
  }
  throw Error(Errc::no_feasible_path,
              fmt::format("no feasible path {} -> {}: capacity below {} b/s{}", src, dst, qos.min_bps,
                          qos.diversity == 2 ? " on two link-disjoint paths" : ""));
}

void Controller::reserve(const ServiceSession& s) {
  for (const auto& p : s.paths) {
    for (const auto& id : p.links) links_.at(id).reserved_bps += s.qos.min_bps;
  }
}

void Controller::release(const ServiceSession& s) {
  for (const auto& p : s.paths) {
    for (const auto& id : p.links) {
      auto& l = links_.at(id);
      l.reserved_bps = std::max(0.0, l.reserved_bps - s.qos.min_bps);
    }
  }
}

void Controller::fail_session(ServiceSession& s, const std::string& why) {
  if (s.state == SessionState::active) release(s);
  s.state = SessionState::failed;
  s.failure = why;
  if (!bus_) return;
  // Queued only; called from inside message handlers too.
  for (const auto& n : std::set<std::string>{s.src_node, s.dst_node}) {
    bus_->send(MsgKind::SESSION_CMD, kControllerAddress, agent_address(n),
               {{"op", "fail"}, {"session", s.id.hex()}, {"label", s.label}, {"reason", why}});
  }
}

Id128 Controller::open_connect(const std::string& src_app, const std::string& dst_app, const QoS& qos, double now,
                               std::string label) {
  validate(qos);
  const auto& a = model_.app(src_app);
  const auto& b = model_.app(dst_app);
  auto paths = compute_path(a.node, b.node, qos);

  ServiceSession s;
  s.id = ids_.next_id();
  s.label = label.empty() ? s.id.uuid() : std::move(label);
  s.src_app = a.id;
  s.dst_app = b.id;
  s.src_node = a.node;
  s.dst_node = b.node;
  s.qos = qos;
  s.opened_at = now;
  s.paths = std::move(paths);
  for (std::size_t i = 0; i < s.paths.size(); ++i) s.stream_tags.push_back(fmt::format("p{}", i + 1));

  std::vector<HopConfig> hops;
  for (const auto& p : s.paths) {
    for (std::size_t i = 0; i < p.links.size(); ++i) {
      const auto& l = links_.at(p.links[i]);
      double expected = l.loss_db;
      if (auto it = attenuation_bias_.find(l.id); it != attenuation_bias_.end()) expected += it->second;
      hops.push_back({s.id, p.nodes[i], p.nodes[i + 1], l.id, l.channel, expected, p.nodes[i + 1]});
      hops.push_back({s.id, p.nodes[i + 1], p.nodes[i], l.id, l.channel, expected, p.nodes[i]});
    }
  }

  const auto id = s.id;
  sessions_.emplace(id, s);
  ServiceSession& stored = sessions_.at(id);
  if (bus_) {
    alarms_.clear();
    for (const auto& h : hops) {
      bus_->send(MsgKind::CONFIG_HOP, kControllerAddress, agent_address(h.node),
                 {{"session", h.session.hex()},
                  {"node", h.node},
                  {"peer", h.peer},
                  {"link", h.link},
                  {"wavelength", std::to_string(h.wavelength)},
                  {"expected_attenuation_db", fmt::format("{}", h.expected_attenuation_db)},
                  {"pool", h.pool_peer}});
    }
    bus_->pump();
    for (const auto& alarm : alarms_) {
      auto f = alarm.fields.find("session");
      if (f == alarm.fields.end() || f->second != id.hex()) continue;
      stored.state = SessionState::failed;
      stored.failure = fmt::format("configuration failed at node '{}': {}", alarm.at("node"), alarm.at("reason"));
      const std::string msg = stored.failure;
      for (const auto& h : hops) {
        bus_->send(MsgKind::SESSION_CMD, kControllerAddress, agent_address(h.node),
                   {{"op", "abort"}, {"session", id.hex()}});
      }
      bus_->pump();
      throw Error(Errc::configuration_failed, msg);
    }
  }
  hop_configs_[id] = std::move(hops);
  stored.state = SessionState::configured;
  reserve(stored);
  if (bus_) {
    std::set<std::string> endpoints{stored.src_node, stored.dst_node};
    for (const auto& n : endpoints) {
      bus_->send(MsgKind::SESSION_CMD, kControllerAddress, agent_address(n),
                 {{"op", "open"},
                  {"session", id.hex()},
                  {"label", stored.label},
                  {"src", stored.src_app},
                  {"dst", stored.dst_app},
                  {"paths", std::to_string(stored.paths.size())}});
    }
    bus_->pump();
  }
  stored.state = SessionState::active;
  return id;
}

Accounting Controller::close(const Id128& id) {
  auto& s = session_mut(id);
  if (s.state == SessionState::closed) {
    throw Error(Errc::session_closed, fmt::format("session {} is already closed", s.label));
  }
  if (s.state == SessionState::active || s.state == SessionState::configured) release(s);
  s.state = SessionState::closed;
  if (bus_) {
    std::string consumed;
    for (const auto& [link, n] : s.consumed_per_link) {
      consumed += fmt::format("{}{}={}", consumed.empty() ? "" : ",", link, n);
    }
    std::set<std::string> nodes;
    for (const auto& p : s.paths) nodes.insert(p.nodes.begin(), p.nodes.end());
    for (const auto& n : nodes) {
      bus_->send(MsgKind::SESSION_CMD, kControllerAddress, agent_address(n),
                 {{"op", "close"},
                  {"session", id.hex()},
                  {"label", s.label},
                  {"consumed", consumed},
                  {"delivered_bytes", std::to_string(s.delivered_bytes)},
                  {"delivered_chunks", std::to_string(s.delivered_chunks)}});
    }
    bus_->pump();
  }
  return Accounting{s.id, s.label, s.state, s.delivered_chunks, s.delivered_bytes, s.consumed_per_link};
}

const ServiceSession& Controller::session(const Id128& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(Errc::unknown_session, fmt::format("unknown session {}", id.uuid()));
  return it->second;
}

ServiceSession& Controller::session_mut(const Id128& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(Errc::unknown_session, fmt::format("unknown session {}", id.uuid()));
  return it->second;
}

std::vector<HopConfig> Controller::hop_configs(const Id128& id) const {
  auto it = hop_configs_.find(id);
  return it == hop_configs_.end() ? std::vector<HopConfig>{} : it->second;
}

NetworkStatus Controller::network_status() const {
  NetworkStatus st;
  st.nodes.assign(registered_.begin(), registered_.end());
  for (const auto& l : model_.links) {
    if (auto it = links_.find(l.id); it != links_.end() && it->second.registered) st.links.push_back(it->second);
  }
  for (const auto& [id, s] : sessions_) st.sessions.push_back(s);
  for (const auto& [node, d] : descriptors_) {
    if (!d.pool_levels.empty()) st.pools[node] = d.pool_levels;
  }
  return st;
}

std::string Controller::snapshot() const {
  nlohmann::ordered_json j;
  j["issued"] = sessions_.size();
  auto& links = j["links"] = nlohmann::ordered_json::array();
  for (const auto& [id, l] : links_) links.push_back({{"id", id}, {"rate_bps", l.rate_bps}, {"qber", l.qber}});
  auto& sessions = j["sessions"] = nlohmann::ordered_json::array();
  for (const auto& [id, s] : sessions_) {
    nlohmann::ordered_json paths = nlohmann::ordered_json::array();
    for (const auto& p : s.paths) {
      paths.push_back({{"nodes", p.nodes}, {"links", p.links}, {"bottleneck_bps", p.bottleneck_bps}});
    }
    sessions.push_back({{"id", id.uuid()},
                        {"label", s.label},
                        {"src_app", s.src_app},
                        {"dst_app", s.dst_app},
                        {"src_node", s.src_node},
                        {"dst_node", s.dst_node},
                        {"qos",
                         {{"key_chunk_size", s.qos.key_chunk_size},
                          {"min_bps", s.qos.min_bps},
                          {"max_bps", s.qos.max_bps},
                          {"priority", s.qos.priority},
                          {"timeout_ms", s.qos.timeout_ms},
                          {"ttl_s", s.qos.ttl_s},
                          {"diversity", s.qos.diversity}}},
                        {"state", to_string(s.state)},
                        {"degraded", s.degraded},
                        {"failure", s.failure},
                        {"paths", paths},
                        {"stream_tags", s.stream_tags},
                        {"opened_at", s.opened_at},
                        {"delivered_chunks", s.delivered_chunks},
                        {"delivered_bytes", s.delivered_bytes},
                        {"consumed_per_link", s.consumed_per_link}});
  }
  return j.dump(1);
}

void Controller::restore(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  sessions_.clear();
  hop_configs_.clear();
  for (auto& [id, l] : links_) l.reserved_bps = 0;
  for (const auto& l : j.at("links")) {
    auto it = links_.find(l.at("id").get<std::string>());
    if (it == links_.end()) continue;
    it->second.rate_bps = l.at("rate_bps").get<double>();
    it->second.qber = l.at("qber").get<double>();
    it->second.alive = it->second.rate_bps > 0;
  }
  for (const auto& js : j.at("sessions")) {
    ServiceSession s;
    s.id = Id128::from_uuid(js.at("id").get<std::string>());
    s.label = js.at("label").get<std::string>();
    s.src_app = js.at("src_app").get<std::string>();
    s.dst_app = js.at("dst_app").get<std::string>();
    s.src_node = js.at("src_node").get<std::string>();
    s.dst_node = js.at("dst_node").get<std::string>();
    const auto& q = js.at("qos");
    s.qos = QoS{q.at("key_chunk_size").get<std::size_t>(), q.at("min_bps").get<double>(),
                q.at("max_bps").get<double>(),          q.at("priority").get<int>(),
                q.at("timeout_ms").get<int>(),          q.at("ttl_s").get<double>(),
                q.at("diversity").get<int>()};
    s.state = state_from(js.at("state").get<std::string>());
    s.degraded = js.at("degraded").get<bool>();
    s.failure = js.at("failure").get<std::string>();
    for (const auto& p : js.at("paths")) {
      s.paths.push_back(PathPlan{p.at("nodes").get<std::vector<std::string>>(),
                                 p.at("links").get<std::vector<std::string>>(), p.at("bottleneck_bps").get<double>()});
    }
    s.stream_tags = js.at("stream_tags").get<std::vector<std::string>>();
    s.opened_at = js.at("opened_at").get<double>();
    s.delivered_chunks = js.at("delivered_chunks").get<std::uint64_t>();
    s.delivered_bytes = js.at("delivered_bytes").get<std::uint64_t>();
    s.consumed_per_link = js.at("consumed_per_link").get<std::map<std::string, std::uint64_t>>();
    if (s.state == SessionState::active) reserve(s);
    sessions_.emplace(s.id, std::move(s));
  }
  // Continue the id sequence past every issued session.
  const auto issued = j.at("issued").get<std::size_t>();
  for (std::size_t i = 0; i < issued; ++i) ids_.next_id();
}

Agent::Agent(const NetworkModel& model, std::string node,
             const std::map<std::string, optics::SwitchedConnection>& links, MessageBus* bus, std::uint64_t seed)
    : model_(model), node_(std::move(node)), links_(links), bus_(bus), store_(node_, seed) {
  if (bus_) bus_->attach(agent_address(node_), [this](const Message& m) { handle(m); });
}

NodeDescriptor Agent::descriptor() const {
  NodeDescriptor d;
  d.node = node_;
  d.address = agent_address(node_);
  d.modules = model_.node(node_).hosted_modules;
  for (const auto& l : model_.links) {
    auto [a, b] = model_.link_nodes(l.id);
    if (a == node_ || b == node_) d.links.push_back(l.id);
  }
  for (const auto& p : store_.pools()) {
    if (p.key.mode == netmodel::KeyMode::distilled && p.key.peer != node_) d.pool_levels[p.key.peer] += p.available;
  }
  return d;
}

void Agent::start() {
  if (!bus_) return;
  const auto d = descriptor();
  bus_->send(MsgKind::REGISTER, d.address, kControllerAddress,
             {{"node", d.node},
              {"address", d.address},
              {"modules", join(d.modules)},
              {"links", join(d.links)},
              {"interfaces", "004,014"}});
}

void Agent::handle(const Message& msg) {
  if (!seen_.insert(msg.id).second) return;
  if (msg.kind == MsgKind::CONFIG_HOP) {
    HopConfig h{Id128::from_hex(msg.at("session")),
                msg.at("node"),
                msg.at("peer"),
                msg.at("link"),
                std::stoi(msg.at("wavelength")),
                std::stod(msg.at("expected_attenuation_db")),
                msg.at("pool")};
    auto alarm = [&](const std::string& reason, std::map<std::string, std::string> extra = {}) {
      extra["session"] = h.session.hex();
      extra["node"] = node_;
      extra["link"] = h.link;
      extra["reason"] = reason;
      bus_->send(MsgKind::ALARM, agent_address(node_), kControllerAddress, std::move(extra));
    };
    auto it = links_.find(h.link);
    if (h.node != node_ || it == links_.end()) {
      alarm("link does not terminate here");
      return;
    }
    // The agent measures against its own view of the optical path.
    const double local = optics::path_loss(model_, it->second.path);
    if (std::abs(local - h.expected_attenuation_db) > 1.0) {
      alarm("attenuation", {{"expected_db", fmt::format("{}", h.expected_attenuation_db)},
                            {"measured_db", fmt::format("{}", local)}});
      return;
    }
    if (h.wavelength != it->second.channel) {
      alarm("wavelength", {{"expected", std::to_string(h.wavelength)}, {"provisioned", std::to_string(it->second.channel)}});
      return;
    }
    hops_[h.session].push_back(std::move(h));
  } else if (msg.kind == MsgKind::SESSION_CMD) {
    const auto sid = Id128::from_hex(msg.at("session"));
    const auto& op = msg.at("op");
    if (op == "open") {
      endpoint_sessions_.insert(sid);
    } else {
      endpoint_sessions_.erase(sid);
      hops_.erase(sid);
    }
  }
}

void Agent::report(const std::map<std::string, std::pair<double, double>>& link_rates) {
  if (!bus_) return;
  std::map<std::string, std::string> fields;
  for (const auto& p : store_.pools()) {
    if (p.key.peer == node_) continue;
    const std::string prefix = p.key.mode == netmodel::KeyMode::raw ? "raw." : "pool.";
    auto [it, fresh] = fields.try_emplace(prefix + p.key.peer, "0");
    it->second = std::to_string(std::stoull(it->second) + p.available);
  }
  for (const auto& [id, rq] : link_rates) {
    fields["link." + id + ".rate"] = fmt::format("{}", rq.first);
    fields["link." + id + ".qber"] = fmt::format("{}", rq.second);
  }
  bus_->send(MsgKind::POOL_REPORT, agent_address(node_), kControllerAddress, std::move(fields));
}

}  // namespace qkdnet::control

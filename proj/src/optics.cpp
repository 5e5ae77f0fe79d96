#include "qkdnet/optics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "qkdnet/error.hpp"

namespace qkdnet::optics {

using netmodel::NetworkModel;
using netmodel::PortRef;

bool Occupancy::is_free(std::string_view node, ChannelIndex channel) const {
  return !owners_.contains({std::string(node), channel});
}

std::optional<std::string> Occupancy::owner(std::string_view node, ChannelIndex channel) const {
  auto it = owners_.find({std::string(node), channel});
  if (it == owners_.end()) return std::nullopt;
  return it->second;
}

void Occupancy::book(const std::string& connection, const std::vector<std::string>& nodes, ChannelIndex channel) {
  for (const auto& n : nodes) {
    if (auto o = owner(n, channel)) {
      throw Error(Errc::no_channel,
                  fmt::format("channel {} at node '{}' is already owned by '{}'", channel, n, *o));
    }
  }
  for (const auto& n : nodes) owners_.emplace(std::make_pair(n, channel), connection);
}

std::size_t Occupancy::release(std::string_view connection) {
  return std::erase_if(owners_, [&](const auto& kv) { return kv.second == connection; });
}

namespace {

void check_path_shape(const NetworkModel& model, const OpticalPath& path) {
  if (path.spans.empty()) throw Error(Errc::empty_path, "empty path");
  if (path.nodes.size() != path.spans.size() + 1 || path.elements.size() != path.nodes.size()) {
    throw Error(Errc::invalid_argument, "path nodes/elements do not match its spans");
  }
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < path.spans.size(); ++i) {
    const auto& span = model.span(path.spans[i]);
    const auto& from = path.nodes[i];
    const auto& to = path.nodes[i + 1];
    if (!((span.a == from && span.b == to) || (span.b == from && span.a == to))) {
      throw Error(Errc::invalid_argument,
                  fmt::format("span '{}' does not join '{}' and '{}'", span.id, from, to));
    }
  }
  for (const auto& n : path.nodes) {
    model.node(n);
    if (!seen.insert(n).second) throw Error(Errc::invalid_argument, fmt::format("node '{}' repeats", n));
  }
  for (const auto& group : path.elements) {
    for (const auto& e : group) {
      if (!model.find_element(e)) throw Error(Errc::unknown_entity, fmt::format("unknown element '{}'", e));
    }
  }
}

}  // namespace

double path_loss(const NetworkModel& model, const OpticalPath& path) {
  check_path_shape(model, path);
  double loss = 0.0;
  for (std::size_t i = 0; i < path.nodes.size(); ++i) {
    for (const auto& e : path.elements[i]) loss += model.find_element(e)->insertion_loss_db();
    if (i < path.spans.size()) loss += model.span(path.spans[i]).loss_db();
  }
  return loss;
}

namespace {

std::set<ChannelIndex> channel_universe(const NetworkModel& model) {
  std::set<ChannelIndex> all;
  for (const auto& e : model.elements) all.insert(e.passband.begin(), e.passband.end());
  for (const auto& q : model.modules) {
    if (q.fixed_channel) all.insert(*q.fixed_channel);
  }
  return all;
}

}  // namespace

std::set<ChannelIndex> feasible_channels(const NetworkModel& model, const OpticalPath& path,
                                         const Occupancy& occupancy) {
  check_path_shape(model, path);
  const auto& src = model.module(path.src_module);
  const auto& dst = model.module(path.dst_module);

  std::set<ChannelIndex> candidates = channel_universe(model);
  auto restrict_to = [&](const std::set<ChannelIndex>& allowed) {
    std::erase_if(candidates, [&](ChannelIndex c) { return !allowed.contains(c); });
  };
  if (!src.tunable) restrict_to({*src.fixed_channel});
  if (!dst.tunable) restrict_to({*dst.fixed_channel});
  for (const auto& group : path.elements) {
    for (const auto& id : group) {
      const auto& e = *model.find_element(id);
      if (e.amplified) return {};
      if (e.filters()) restrict_to(e.passband);
    }
  }
  std::erase_if(candidates, [&](ChannelIndex c) {
    return std::ranges::any_of(path.nodes, [&](const std::string& n) { return !occupancy.is_free(n, c); });
  });
  return candidates;
}

bool compatible(const netmodel::QkdModule& src, const netmodel::QkdModule& dst) {
  return src.id != dst.id && src.node != dst.node && src.can_transmit() && dst.can_receive() &&
         src.family == dst.family && src.vendor == dst.vendor;
}

namespace {

// Port graph: hubs stand in for nodes without elements on a given attachment.
class PortGraph {
 public:
  explicit PortGraph(const NetworkModel& model) : model_(model) {
    for (const auto& e : model.elements) {
      const std::string key = element_key(e.id);
      node_of_[key] = e.node;
      for (const auto& p : e.ports) {
        switch (p.kind) {
          case PortRef::Kind::element:
            add_unique(element_adj_[key], element_key(p.id));
            add_unique(element_adj_[element_key(p.id)], key);
            break;
          case PortRef::Kind::module:
            add_unique(modules_at_[key], p.id);
            add_unique(module_attach_[p.id], key);
            break;
          case PortRef::Kind::span:
            add_unique(spans_at_[key], p.id);
            add_unique(span_attach_[{p.id, e.node}], key);
            break;
        }
      }
    }
    for (const auto& q : model.modules) {
      if (!module_attach_.contains(q.id)) {
        const std::string hub = hub_key(q.node);
        node_of_[hub] = q.node;
        add_unique(module_attach_[q.id], hub);
        add_unique(modules_at_[hub], q.id);
      }
    }
    for (const auto& s : model.spans) {
      for (const auto& n : {s.a, s.b}) {
        if (!span_attach_.contains({s.id, n})) {
          const std::string hub = hub_key(n);
          node_of_[hub] = n;
          add_unique(span_attach_[{s.id, n}], hub);
          add_unique(spans_at_[hub], s.id);
        }
      }
    }
    for (auto* m : {&element_adj_, &modules_at_, &spans_at_, &module_attach_}) {
      for (auto& [k, v] : *m) std::ranges::sort(v);
    }
    for (auto& [k, v] : span_attach_) std::ranges::sort(v);
  }

  void enumerate(std::string_view src, std::string_view dst, double budget, std::vector<OpticalPath>& out) {
    const auto& s = model_.module(src);
    const auto& d = model_.module(dst);
    dst_ = d.id;
    dst_node_ = d.node;
    budget_ = budget;
    out_ = &out;
    current_ = OpticalPath{s.id, d.id, {}, {s.node}, {{}}};
    visited_nodes_ = {s.node};
    visited_elements_.clear();
    loss_ = 0.0;
    for (const auto& v : lookup(module_attach_, s.id)) visit(v);
  }

 private:
  static std::string element_key(std::string_view id) { return fmt::format("e:{}", id); }
  static std::string hub_key(std::string_view node) { return fmt::format("h:{}", node); }

  static void add_unique(std::vector<std::string>& v, std::string item) {
    if (std::ranges::find(v, item) == v.end()) v.push_back(std::move(item));
  }

  template <typename Map, typename Key>
  static const std::vector<std::string>& lookup(const Map& m, const Key& k) {
    static const std::vector<std::string> empty;
    auto it = m.find(k);
    return it == m.end() ? empty : it->second;
  }

  void visit(const std::string& vertex) {
    const bool is_element = vertex.starts_with("e:");
    double added = 0.0;
    if (is_element) {
      const auto& e = *model_.find_element(std::string_view(vertex).substr(2));
      added = e.insertion_loss_db();
      if (loss_ + added > budget_) return;
      visited_elements_.insert(vertex);
      current_.elements.back().push_back(e.id);
    }
    loss_ += added;

    const std::string node = node_of_.at(vertex);
    if (node == dst_node_ && !current_.spans.empty()) {
      const auto& mods = lookup(modules_at_, vertex);
      if (std::ranges::find(mods, dst_) != mods.end()) out_->push_back(current_);
    }

    if (is_element) {
      for (const auto& next : lookup(element_adj_, vertex)) {
        if (!visited_elements_.contains(next)) visit(next);
      }
    }

    for (const auto& span_id : lookup(spans_at_, vertex)) {
      const auto& span = model_.span(span_id);
      const std::string& far = span.other_end(node);
      if (visited_nodes_.contains(far)) continue;
      const double span_loss = span.loss_db();
      if (loss_ + span_loss > budget_) continue;
      loss_ += span_loss;
      visited_nodes_.insert(far);
      current_.spans.push_back(span_id);
      current_.nodes.push_back(far);
      current_.elements.emplace_back();
      for (const auto& attach : lookup(span_attach_, std::make_pair(span_id, far))) visit(attach);
      current_.elements.pop_back();
      current_.nodes.pop_back();
      current_.spans.pop_back();
      visited_nodes_.erase(far);
      loss_ -= span_loss;
    }

    loss_ -= added;
    if (is_element) {
      current_.elements.back().pop_back();
      visited_elements_.erase(vertex);
    }
  }

  const NetworkModel& model_;
  std::unordered_map<std::string, std::string> node_of_;
  std::unordered_map<std::string, std::vector<std::string>> element_adj_;
  std::unordered_map<std::string, std::vector<std::string>> modules_at_;
  std::unordered_map<std::string, std::vector<std::string>> spans_at_;
  std::unordered_map<std::string, std::vector<std::string>> module_attach_;
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> span_attach_;

  std::string dst_;
  std::string dst_node_;
  double budget_ = 0.0;
  std::vector<OpticalPath>* out_ = nullptr;
  OpticalPath current_;
  std::unordered_set<std::string> visited_nodes_;
  std::unordered_set<std::string> visited_elements_;
  double loss_ = 0.0;
};

}  // namespace

std::vector<OpticalPath> enumerate_paths(const NetworkModel& model, std::string_view src_module,
                                         std::string_view dst_module, double max_loss_db) {
  std::vector<OpticalPath> out;
  PortGraph graph(model);
  // The walk sums losses in visiting order; the slack keeps boundary paths
  // whose canonical path_loss() is exactly on budget.
  graph.enumerate(src_module, dst_module, max_loss_db + 1e-9, out);
  std::erase_if(out, [&](const OpticalPath& p) { return path_loss(model, p) > max_loss_db; });
  return out;
}

SwitchedConnection assign_connection(const NetworkModel& model, std::string_view src_module,
                                     std::string_view dst_module, Occupancy& occupancy, double max_loss_db,
                                     std::string connection_id) {
  const auto& src = model.module(src_module);
  const auto& dst = model.module(dst_module);
  if (!compatible(src, dst)) {
    throw Error(Errc::invalid_argument,
                fmt::format("modules '{}' -> '{}' cannot form a QKD link", src.id, dst.id));
  }
  if (connection_id.empty()) connection_id = src.id + ">" + dst.id;

  struct Candidate {
    double loss;
    std::size_t hops;
    ChannelIndex channel;
    const OpticalPath* path;
  };
  auto paths = enumerate_paths(model, src.id, dst.id, max_loss_db);
  std::optional<Candidate> best;
  for (const auto& p : paths) {
    const double loss = path_loss(model, p);
    if (loss > max_loss_db) continue;
    auto channels = feasible_channels(model, p, occupancy);
    if (channels.empty()) continue;
    Candidate c{loss, p.hops(), *channels.begin(), &p};
    auto key = [](const Candidate& x) {
      return std::tie(x.loss, x.hops, x.channel, x.path->nodes, x.path->elements);
    };
    if (!best || key(c) < key(*best)) best = c;
  }

  if (!best) {
    if (!paths.empty()) {
      throw Error(Errc::no_channel,
                  fmt::format("no free channel for '{}' -> '{}' on any path within {} dB", src.id, dst.id,
                              max_loss_db));
    }
    if (!enumerate_paths(model, src.id, dst.id, std::numeric_limits<double>::infinity()).empty()) {
      throw Error(Errc::loss_exceeded,
                  fmt::format("every path '{}' -> '{}' exceeds the {} dB budget", src.id, dst.id, max_loss_db));
    }
    throw Error(Errc::no_path, fmt::format("no optical path between '{}' and '{}'", src.id, dst.id));
  }

  SwitchedConnection conn{std::move(connection_id), *best->path, best->channel, best->loss};
  occupancy.book(conn.id, conn.path.nodes, conn.channel);
  return conn;
}

void release_connection(Occupancy& occupancy, const SwitchedConnection& connection) {
  occupancy.release(connection.id);
}

std::vector<ConnectivityEntry> enumerate_connectivity(const NetworkModel& model, const ConnectivityOptions& options) {
  std::vector<ConnectivityEntry> out;
  for (const auto& src : model.modules) {
    if (options.domain && src.domain != *options.domain) continue;
    for (const auto& dst : model.modules) {
      if (options.domain && dst.domain != *options.domain) continue;
      if (!compatible(src, dst)) continue;
      Occupancy scratch;
      try {
        auto c = assign_connection(model, src.id, dst.id, scratch,
                                   options.max_loss_db.value_or(src.rate.max_loss_db));
        out.push_back({src.id, dst.id, c.channel, c.total_loss_db, c.path.hops(), std::move(c.path)});
      } catch (const Error& e) {
        if (e.code() != Errc::no_path && e.code() != Errc::loss_exceeded && e.code() != Errc::no_channel) throw;
      }
    }
  }
  std::ranges::sort(out, [](const auto& a, const auto& b) {
    return std::tie(a.src_module, a.dst_module) < std::tie(b.src_module, b.dst_module);
  });
  return out;
}

}  // namespace qkdnet::optics

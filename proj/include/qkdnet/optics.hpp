#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qkdnet/netmodel.hpp"

namespace qkdnet::optics {

using ChannelIndex = int;

// A lightpath between two QKD modules. nodes.size() == spans.size() + 1 and
// elements[i] lists the optical elements traversed at nodes[i], in order.
struct OpticalPath {
  std::string src_module;
  std::string dst_module;
  std::vector<std::string> spans;
  std::vector<std::string> nodes;
  std::vector<std::vector<std::string>> elements;

  std::size_t hops() const { return spans.size(); }
  bool operator==(const OpticalPath&) const = default;
};

// (node, channel) -> owning connection. At most one owner per pair.
class Occupancy {
 public:
  bool is_free(std::string_view node, ChannelIndex channel) const;
  std::optional<std::string> owner(std::string_view node, ChannelIndex channel) const;

  // Throws Error(no_channel) if any (node, channel) is already owned.
  void book(const std::string& connection, const std::vector<std::string>& nodes, ChannelIndex channel);
  // Frees every pair owned by `connection`; returns the number released.
  std::size_t release(std::string_view connection);

  std::size_t size() const { return owners_.size(); }
  const std::map<std::pair<std::string, ChannelIndex>, std::string>& entries() const { return owners_; }

  bool operator==(const Occupancy&) const = default;

 private:
  std::map<std::pair<std::string, ChannelIndex>, std::string> owners_;
};

struct SwitchedConnection {
  std::string id;
  OpticalPath path;
  ChannelIndex channel = 0;
  double total_loss_db = 0.0;
};

// Sum of span attenuation and element insertion losses along the path.
double path_loss(const netmodel::NetworkModel& model, const OpticalPath& path);

// Channels usable on `path`: intersection of traversed filter passbands and
// fixed module channels, minus channels owned at any node of the path. Empty
// when the path crosses an amplified element.
std::set<ChannelIndex> feasible_channels(const netmodel::NetworkModel& model, const OpticalPath& path,
                                         const Occupancy& occupancy);

// Every simple lightpath from src to dst whose loss does not exceed
// `max_loss_db`, in no particular order.
std::vector<OpticalPath> enumerate_paths(const netmodel::NetworkModel& model, std::string_view src_module,
                                         std::string_view dst_module, double max_loss_db);

// True when `src` may transmit to `dst`: transmit/receive roles, same family
// and vendor, different nodes.
bool compatible(const netmodel::QkdModule& src, const netmodel::QkdModule& dst);

// Picks the lightpath and channel for a new connection and books it in
// `occupancy`. Preference: lowest loss, fewest hops, lowest channel, then
// lexicographic node and element ids. Errors name the binding constraint:
// no_path, loss_exceeded or no_channel.
SwitchedConnection assign_connection(const netmodel::NetworkModel& model, std::string_view src_module,
                                     std::string_view dst_module, Occupancy& occupancy, double max_loss_db,
                                     std::string connection_id = {});

void release_connection(Occupancy& occupancy, const SwitchedConnection& connection);

struct ConnectivityEntry {
  std::string src_module;
  std::string dst_module;
  ChannelIndex channel = 0;
  double loss_db = 0.0;
  std::size_t hops = 0;
  OpticalPath path;
};

struct ConnectivityOptions {
  // Loss budget; when unset each pair uses the transmitter's max_loss_db.
  std::optional<double> max_loss_db;
  // Restrict to modules tagged with this domain.
  std::optional<std::string> domain;
};

// Feasible ordered module pairs under an otherwise empty occupancy, sorted by
// (src, dst).
std::vector<ConnectivityEntry> enumerate_connectivity(const netmodel::NetworkModel& model,
                                                      const ConnectivityOptions& options = {});

}  // namespace qkdnet::optics

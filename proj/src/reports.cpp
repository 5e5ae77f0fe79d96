#include "qkdnet/reports.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>

#include "qkdnet/error.hpp"
#include "qkdnet/messages.hpp"
#include "qkdnet/optics.hpp"

namespace qkdnet::reports {

const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k{"summary", "coexistence", "connectivity", "sessions"};
  return k;
}

namespace {

std::string domain_label(const std::string& d) { return d == "COLOCATED" ? "Co-located" : d; }

}  // namespace

std::string summary(const netmodel::NetworkModel& model) {
  const auto s = netmodel::summarize(model);
  std::string out = fmt::format("{:<12}{:<7}{:<13}{:<11}{:<13}{}\n", "Domain", "Nodes", "QKD links", "Length",
                                "QKD modules", "Encrypt. modules");
  for (const auto& d : s.domains) {
    out += fmt::format("{:<12}{:<7}{:<13}{:<11}{:<13}{}\n", domain_label(d.domain), d.nodes, d.links_label(),
                       fmt::format("{:.1f} km", d.length_km), d.modules, d.encryptors);
  }
  return out;
}

std::string coexistence(const netmodel::NetworkModel& model) {
  std::string out = fmt::format("{:<22}{:>10}{:>9}{:>11}\n", "Link", "Classical", "Quantum", "Encrypted");
  for (const auto& span : model.spans) {
    const auto c = netmodel::coexistence_census(model, span.id);
    // fmt pads by display width, so accented labels still line up.
    out += fmt::format("{:<22}{:>10}{:>9}{:>11}\n", span.label.empty() ? span.id : span.label, c.classical,
                       c.quantum, c.encrypted);
  }
  return out;
}

std::string connectivity(const netmodel::NetworkModel& model) {
  std::vector<std::string> lines;
  for (const auto& e : optics::enumerate_connectivity(model)) {
    lines.push_back(fmt::format("{} {} {} {:.2f} {}\n", e.src_module, e.dst_module, e.channel, e.loss_db, e.hops));
  }
  std::ranges::sort(lines);
  std::string out;
  for (const auto& l : lines) out += l;
  return out;
}

std::string sessions(std::span<const std::uint8_t> trace) {
  struct Row {
    std::string src = "-";
    std::string dst = "-";
    std::string paths = "-";
    std::string state = "active";
    std::string chunks = "-";
    std::string bytes = "-";
    std::string consumed = "-";
  };
  std::map<std::string, Row> rows;  // by label
  std::map<std::string, std::string> labels;  // session hex -> label
  for (const auto& m : control::read_trace(trace)) {
    if (m.kind != control::MsgKind::SESSION_CMD) continue;
    const auto& op = m.at("op");
    const auto& sid = m.at("session");
    if (op == "open") {
      labels[sid] = m.at("label");
      auto& r = rows[m.at("label")];
      r.src = m.at("src");
      r.dst = m.at("dst");
      r.paths = m.at("paths");
    } else if (op == "close" || op == "fail") {
      auto& r = rows[m.at("label")];
      labels.try_emplace(sid, m.at("label"));
      if (op == "fail") {
        r.state = "failed";
        continue;
      }
      r.state = "closed";
      r.chunks = m.at("delivered_chunks");
      r.bytes = m.at("delivered_bytes");
      r.consumed = m.at("consumed").empty() ? "-" : m.at("consumed");
    }
  }
  std::string out = fmt::format("{:<38}{:<7}{:<7}{:<6}{:<8}{:>8}{:>10}  {}\n", "session", "src", "dst", "paths",
                                "state", "chunks", "bytes", "consumed");
  for (const auto& [label, r] : rows) {
    out += fmt::format("{:<38}{:<7}{:<7}{:<6}{:<8}{:>8}{:>10}  {}\n", label, r.src, r.dst, r.paths, r.state, r.chunks,
                       r.bytes, r.consumed);
  }
  return out;
}

std::string render(const std::string& kind, const netmodel::NetworkModel& model,
                   const std::vector<std::uint8_t>* trace) {
  if (kind == "summary") return summary(model);
  if (kind == "coexistence") return coexistence(model);
  if (kind == "connectivity") return connectivity(model);
  if (kind == "sessions") {
    if (!trace) throw Error(Errc::no_trace, "no trace: the sessions report needs a run trace (--trace PATH)");
    return sessions(*trace);
  }
  throw Error(Errc::invalid_argument, fmt::format("unknown report kind '{}'", kind));
}

std::vector<std::string> parse_list(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    if (std::ranges::find(kinds(), item) == kinds().end()) {
      throw Error(Errc::invalid_argument, fmt::format("unknown report kind '{}'", item));
    }
    out.push_back(item);
  }
  return out;
}

}  // namespace qkdnet::reports

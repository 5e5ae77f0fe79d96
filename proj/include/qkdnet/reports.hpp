#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qkdnet/netmodel.hpp"

namespace qkdnet::reports {

// Kinds accepted by render(), in the order they print.
const std::vector<std::string>& kinds();

std::string summary(const netmodel::NetworkModel& model);
std::string coexistence(const netmodel::NetworkModel& model);
// One line per feasible ordered module pair: `src dst channel loss_db hops`.
std::string connectivity(const netmodel::NetworkModel& model);
// Session accounting recovered from a controller-agent trace.
std::string sessions(std::span<const std::uint8_t> trace);

// Throws invalid_argument for an unknown kind and no_trace when `kind` is
// sessions and `trace` is null.
std::string render(const std::string& kind, const netmodel::NetworkModel& model,
                   const std::vector<std::uint8_t>* trace = nullptr);

// "summary,coexistence" -> {"summary", "coexistence"}; validates each kind.
std::vector<std::string> parse_list(const std::string& list);

}  // namespace qkdnet::reports

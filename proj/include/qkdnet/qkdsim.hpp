#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qkdnet/keystream.hpp"
#include "qkdnet/netmodel.hpp"
#include "qkdnet/optics.hpp"

namespace qkdnet::qkdsim {

using netmodel::KeyMode;

// Abort region: DV 0.11, CV 0.25 unless the module overrides it.
double abort_threshold(const netmodel::RateParams& params, netmodel::Family family);

// r0 * 10^(-L/10) * max(0, 1 - noise * P), zero past max_loss_db or once the
// QBER reaches the abort threshold.
double link_rate(const netmodel::RateParams& params, double loss_db, double power_index,
                 double abort_qber = 0.5);

// min(0.5, q0 + noise * P * 10^(L/10 - 1) * q0).
double link_qber(const netmodel::RateParams& params, double loss_db, double power_index);

struct KeyBlock {
  Id128 id;
  std::string link_id;
  std::string src_node;
  std::string dst_node;
  std::string vendor;
  std::string stream_tag;
  Bytes bytes;
  std::uint64_t created_at = 0;
  KeyMode mode = KeyMode::distilled;

  bool operator==(const KeyBlock&) const = default;
};

struct QkdLinkState {
  std::string link_id;
  std::string src_module;
  std::string dst_module;
  std::string src_node;
  std::string dst_node;
  std::string vendor;
  netmodel::RateParams params;
  double abort_qber = 0.5;
  bool raw_capable = false;

  optics::OpticalPath path;
  int channel = 0;
  double loss_db = 0.0;
  double power_index = 0.0;

  KeyMode mode = KeyMode::distilled;
  bool active = true;
  double current_rate_bps = 0.0;
  double current_qber = 0.0;
  std::uint64_t rng_seed = 0;

  std::uint64_t tick = 0;
  // Fractional bits carried between steps so totals track rate * time.
  double carry_bits = 0.0;
  std::uint64_t bytes_emitted = 0;
};

// Builds the state of a declared link over its provisioned connection and
// evaluates rate and QBER for the path's loss and classical load.
QkdLinkState make_link_state(const netmodel::NetworkModel& model, std::string_view link_id,
                             const optics::SwitchedConnection& connection, std::uint64_t seed);

// Re-evaluates rate and QBER after loss or classical load changed.
void set_conditions(QkdLinkState& state, double loss_db, double power_index);

struct StepOutput {
  std::optional<KeyBlock> at_src;
  std::optional<KeyBlock> at_dst;
  std::size_t bytes = 0;
};

// Advances one tick of dt_s seconds. Emits floor((carry + rate * dt) / 8)
// bytes; in raw mode the receiver copy has each bit flipped with probability
// current_qber. Throws inactive_link.
StepOutput step(QkdLinkState& state, double dt_s);

// Returns true when the mode changed. Throws unsupported_mode for raw on a
// link whose modules cannot deliver raw key.
bool set_mode(QkdLinkState& state, KeyMode mode);

struct MetricsRecord {
  std::uint64_t tick = 0;
  std::string link_id;
  double rate_bps = 0.0;
  double qber = 0.0;
  std::size_t bytes_emitted = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& record);

}  // namespace qkdnet::qkdsim

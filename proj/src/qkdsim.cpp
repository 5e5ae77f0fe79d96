#include "qkdnet/qkdsim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "qkdnet/error.hpp"

namespace qkdnet::qkdsim {

double abort_threshold(const netmodel::RateParams& params, netmodel::Family family) {
  if (params.abort_qber) return *params.abort_qber;
  return family == netmodel::Family::DV ? 0.11 : 0.25;
}

double link_qber(const netmodel::RateParams& params, double loss_db, double power_index) {
  const double q = params.qber0 + params.noise_coeff * power_index * std::pow(10.0, loss_db / 10.0 - 1.0) * params.qber0;
  return std::min(0.5, q);
}

double link_rate(const netmodel::RateParams& params, double loss_db, double power_index, double abort_qber) {
  if (loss_db > params.max_loss_db) return 0.0;
  if (link_qber(params, loss_db, power_index) >= abort_qber) return 0.0;
  const double penalty = std::max(0.0, 1.0 - params.noise_coeff * power_index);
  return params.r0_bps * std::pow(10.0, -loss_db / 10.0) * penalty;
}

QkdLinkState make_link_state(const netmodel::NetworkModel& model, std::string_view link_id,
                             const optics::SwitchedConnection& connection, std::uint64_t seed) {
  const auto& link = model.link(link_id);
  const auto& src = model.module(link.src_module);
  const auto& dst = model.module(link.dst_module);
  QkdLinkState s;
  s.link_id = link.id;
  s.src_module = src.id;
  s.dst_module = dst.id;
  s.src_node = src.node;
  s.dst_node = dst.node;
  s.vendor = src.vendor;
  s.params = src.rate;
  s.abort_qber = abort_threshold(src.rate, src.family);
  s.raw_capable = src.can_deliver_raw() && dst.can_deliver_raw();
  s.path = connection.path;
  s.channel = connection.channel;
  s.mode = link.mode;
  s.rng_seed = seed;
  set_conditions(s, connection.total_loss_db, netmodel::classical_power_index(model, connection.path.spans));
  return s;
}

void set_conditions(QkdLinkState& state, double loss_db, double power_index) {
  state.loss_db = loss_db;
  state.power_index = power_index;
  state.current_qber = link_qber(state.params, loss_db, power_index);
  state.current_rate_bps = link_rate(state.params, loss_db, power_index, state.abort_qber);
}

namespace {

void flip_bits(const QkdLinkState& state, Bytes& bytes) {
  // A separate stream decides the flips so the sender's copy is the same in
  // both modes.
  const KeyStream flips(state.rng_seed, "flip:" + state.link_id);
  std::vector<std::uint8_t> draws(bytes.size() * 8 * 4);
  flips.fill_at(state.tick, draws);
  const double threshold = state.current_qber * 4294967296.0;
  for (std::size_t bit = 0; bit < bytes.size() * 8; ++bit) {
    const std::uint32_t u = std::uint32_t{draws[4 * bit]} | std::uint32_t{draws[4 * bit + 1]} << 8 |
                            std::uint32_t{draws[4 * bit + 2]} << 16 | std::uint32_t{draws[4 * bit + 3]} << 24;
    if (static_cast<double>(u) < threshold) bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
  }
}

}  // namespace

StepOutput step(QkdLinkState& state, double dt_s) {
  if (!state.active) throw Error(Errc::inactive_link, fmt::format("link '{}' is not active", state.link_id));
  if (!(dt_s > 0)) throw Error(Errc::invalid_argument, "step duration must be positive");

  StepOutput out;
  const double bits = state.carry_bits + state.current_rate_bps * dt_s;
  const auto n = static_cast<std::size_t>(std::floor(bits / 8.0));
  state.carry_bits = bits - 8.0 * static_cast<double>(n);
  if (state.current_rate_bps <= 0) state.carry_bits = 0;

  if (n > 0) {
    KeyBlock block;
    const KeyStream material(state.rng_seed, "key:" + state.link_id);
    block.bytes.resize(n);
    material.fill_at(state.tick, block.bytes);
    const KeyStream ids(state.rng_seed, "block:" + state.link_id);
    ids.fill_at(state.tick, block.id.bytes);
    block.link_id = state.link_id;
    block.src_node = state.src_node;
    block.dst_node = state.dst_node;
    block.vendor = state.vendor;
    block.stream_tag = state.link_id;
    block.created_at = state.tick;
    block.mode = state.mode;
    out.at_src = block;
    if (state.mode == KeyMode::raw && state.current_qber > 0) flip_bits(state, block.bytes);
    out.at_dst = std::move(block);
    out.bytes = n;
    state.bytes_emitted += n;
  }
  ++state.tick;
  return out;
}

bool set_mode(QkdLinkState& state, KeyMode mode) {
  if (mode == state.mode) return false;
  if (mode == KeyMode::raw && !state.raw_capable) {
    throw Error(Errc::unsupported_mode, fmt::format("link '{}' cannot deliver raw key", state.link_id));
  }
  state.mode = mode;
  return true;
}

std::string metrics_csv_header() { return "tick,link_id,rate_bps,qber,bytes_emitted"; }

std::string metrics_csv_row(const MetricsRecord& r) {
  return fmt::format("{},{},{:.3f},{:.6f},{}", r.tick, r.link_id, r.rate_bps, r.qber, r.bytes_emitted);
}

}  // namespace qkdnet::qkdsim

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qkdnet {

using Bytes = std::vector<std::uint8_t>;

// 128-bit identifier for blocks, chunks, sessions and key_IDs.
struct Id128 {
  std::array<std::uint8_t, 16> bytes{};

  std::string hex() const;
  // 8-4-4-4-12 rendering used on the northbound and in session ids.
  std::string uuid() const;
  static Id128 from_uuid(std::string_view text);
  static Id128 from_hex(std::string_view text);

  auto operator<=>(const Id128&) const = default;
  bool operator==(const Id128&) const = default;
};

// Seeded counter-mode generator (ChaCha20 keyed by BLAKE2b(seed, label)).
// Two streams built from the same (seed, label) produce identical output.
class KeyStream {
 public:
  KeyStream(std::uint64_t seed, std::string_view label);

  void fill(std::span<std::uint8_t> out);
  Bytes bytes(std::size_t n);
  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of precision.
  double next_unit();
  Id128 next_id();

  // Stateless access: the output block addressed by `counter`, independent of
  // the sequential position.
  void fill_at(std::uint64_t counter, std::span<std::uint8_t> out) const;

 private:
  void refill();

  std::array<std::uint8_t, 32> key_{};
  std::uint64_t counter_ = 0;
  std::array<std::uint8_t, 64> buffer_{};
  std::size_t used_ = 64;
};

std::string base64_encode(std::span<const std::uint8_t> data);
Bytes base64_decode(std::string_view text);

// libsodium must be initialised before any primitive is used; idempotent.
void ensure_crypto_ready();

}  // namespace qkdnet

#include "qkdnet/keystream.hpp"

#include <sodium.h>

#include <cstring>
#include <stdexcept>

#include "qkdnet/error.hpp"

namespace qkdnet {

void ensure_crypto_ready() {
  static const int rc = sodium_init();
  if (rc < 0) {
    throw std::runtime_error("libsodium initialisation failed");
  }
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string Id128::hex() const {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(32);
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

std::string Id128::uuid() const {
  std::string h = hex();
  return h.substr(0, 8) + "-" + h.substr(8, 4) + "-" + h.substr(12, 4) + "-" + h.substr(16, 4) +
         "-" + h.substr(20, 12);
}

Id128 Id128::from_hex(std::string_view text) {
  if (text.size() != 32) {
    throw Error(Errc::invalid_argument, "identifier must be 32 hex digits");
  }
  Id128 id;
  for (std::size_t i = 0; i < 16; ++i) {
    int hi = hex_value(text[2 * i]);
    int lo = hex_value(text[2 * i + 1]);
    if (hi < 0 || lo < 0) {
      throw Error(Errc::invalid_argument, "identifier contains a non-hex digit");
    }
    id.bytes[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return id;
}

Id128 Id128::from_uuid(std::string_view text) {
  if (text.size() != 36 || text[8] != '-' || text[13] != '-' || text[18] != '-' || text[23] != '-') {
    throw Error(Errc::invalid_argument, "malformed UUID");
  }
  std::string compact;
  for (char c : text) {
    if (c != '-') compact.push_back(c);
  }
  return from_hex(compact);
}

KeyStream::KeyStream(std::uint64_t seed, std::string_view label) {
  ensure_crypto_ready();
  std::array<std::uint8_t, 8> seed_le{};
  for (int i = 0; i < 8; ++i) {
    seed_le[i] = static_cast<std::uint8_t>(seed >> (8 * i));
  }
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, key_.size());
  crypto_generichash_update(&st, seed_le.data(), seed_le.size());
  crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(label.data()), label.size());
  crypto_generichash_final(&st, key_.data(), key_.size());
}

void KeyStream::fill_at(std::uint64_t counter, std::span<std::uint8_t> out) const {
  std::array<std::uint8_t, crypto_stream_chacha20_NONCEBYTES> nonce{};
  for (std::size_t i = 0; i < nonce.size(); ++i) {
    nonce[i] = static_cast<std::uint8_t>(counter >> (8 * i));
  }
  crypto_stream_chacha20(out.data(), out.size(), nonce.data(), key_.data());
}

void KeyStream::refill() {
  // Sequential output uses the upper half of the nonce space so it never
  // collides with fill_at() counters used for per-tick material.
  fill_at(counter_ | (std::uint64_t{1} << 63), buffer_);
  ++counter_;
  used_ = 0;
}

void KeyStream::fill(std::span<std::uint8_t> out) {
  std::size_t pos = 0;
  while (pos < out.size()) {
    if (used_ == buffer_.size()) refill();
    std::size_t n = std::min(out.size() - pos, buffer_.size() - used_);
    std::memcpy(out.data() + pos, buffer_.data() + used_, n);
    used_ += n;
    pos += n;
  }
}

Bytes KeyStream::bytes(std::size_t n) {
  Bytes out(n);
  fill(out);
  return out;
}

std::uint64_t KeyStream::next_u64() {
  std::array<std::uint8_t, 8> raw{};
  fill(raw);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{raw[i]} << (8 * i);
  return v;
}

double KeyStream::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

Id128 KeyStream::next_id() {
  Id128 id;
  fill(id.bytes);
  return id;
}

std::string base64_encode(std::span<const std::uint8_t> data) {
  ensure_crypto_ready();
  const int variant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_ENCODED_LEN(data.size(), variant), '\0');
  sodium_bin2base64(out.data(), out.size(), data.data(), data.size(), variant);
  out.resize(std::strlen(out.c_str()));
  return out;
}

Bytes base64_decode(std::string_view text) {
  ensure_crypto_ready();
  Bytes out(text.size());
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw Error(Errc::invalid_argument, "invalid base64");
  }
  out.resize(len);
  return out;
}

}  // namespace qkdnet

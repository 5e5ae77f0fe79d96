#include "qkdnet/lkms.hpp"

#include <fmt/format.h>
#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <set>

#include "qkdnet/error.hpp"

namespace qkdnet::lkms {

KeyChunk::KeyChunk(Id128 id, Bytes bytes, std::vector<Provenance> provenance, std::string stream_tag)
    : id_(id), bytes_(std::move(bytes)), provenance_(std::move(provenance)), tag_(std::move(stream_tag)) {}

KeyChunk KeyChunk::from_bytes(Bytes bytes, std::string stream_tag, Id128 id) {
  const std::size_t n = bytes.size();
  return KeyChunk(id, std::move(bytes), {Provenance{id, 0, n}}, std::move(stream_tag));
}

void KeyChunk::spend() {
  if (spent_) throw Error(Errc::reused_key, fmt::format("key chunk {} was already used", id_.hex()));
  spent_ = true;
}

KeyStore::KeyStore(std::string node, std::uint64_t seed) : node_(std::move(node)), ids_(seed, "chunks:" + node_) {}

void KeyStore::add(const PoolKey& key, Id128 id, Bytes bytes, std::uint64_t created_at) {
  if (bytes.empty()) throw Error(Errc::zero_length, "empty key block");
  if (known_.contains(id)) throw Error(Errc::duplicate_block, fmt::format("block {} already ingested", id.hex()));
  known_.emplace(id, std::make_pair(bytes.size(), key.vendor));
  ingested_ += bytes.size();
  pools_[key].push_back(Entry{id, std::move(bytes), 0, created_at, seq_++});
}

void KeyStore::ingest(const qkdsim::KeyBlock& block) {
  std::string peer;
  if (block.src_node == node_) {
    peer = block.dst_node;
  } else if (block.dst_node == node_) {
    peer = block.src_node;
  } else {
    throw Error(Errc::foreign_block,
                fmt::format("block from link '{}' does not terminate at '{}'", block.link_id, node_));
  }
  add(PoolKey{peer, block.vendor, block.mode}, block.id, block.bytes, block.created_at);
}

void KeyStore::ingest_local(Id128 id, Bytes bytes, std::uint64_t created_at) {
  add(PoolKey{node_, std::string(kLocalVendor), KeyMode::distilled}, id, std::move(bytes), created_at);
}

std::vector<KeyStore::Entry*> KeyStore::matching(std::string_view peer, std::optional<std::string_view> vendor,
                                                  KeyMode mode) {
  std::vector<Entry*> out;
  for (auto& [key, queue] : pools_) {
    if (key.peer != peer || key.mode != mode) continue;
    if (vendor && key.vendor != *vendor) continue;
    for (auto& e : queue) {
      if (e.cursor < e.bytes.size()) out.push_back(&e);
    }
  }
  // Both ends of a link see the same blocks, so this order is shared.
  std::ranges::sort(out, [](const Entry* a, const Entry* b) {
    return std::tie(a->created_at, a->id) < std::tie(b->created_at, b->id);
  });
  return out;
}

std::size_t KeyStore::available(std::string_view peer, std::optional<std::string_view> vendor, KeyMode mode) const {
  std::size_t n = 0;
  for (const auto& [key, queue] : pools_) {
    if (key.peer != peer || key.mode != mode) continue;
    if (vendor && key.vendor != *vendor) continue;
    for (const auto& e : queue) n += e.bytes.size() - e.cursor;
  }
  return n;
}

KeyChunk KeyStore::reserve(std::string_view peer, std::size_t length, std::optional<std::string_view> vendor,
                           KeyMode mode) {
  if (length == 0) throw Error(Errc::zero_length, "cannot reserve zero bytes");
  auto entries = matching(peer, vendor, mode);
  std::size_t have = 0;
  for (const auto* e : entries) have += e->bytes.size() - e->cursor;
  if (have == 0) {
    throw Error(Errc::empty_pool, fmt::format("no key toward '{}' at '{}'", peer, node_));
  }
  if (have < length) {
    throw Error(Errc::insufficient_key,
                fmt::format("insufficient key toward '{}' at '{}': available {}, requested {}", peer, node_, have,
                            length));
  }

  Bytes out;
  out.reserve(length);
  std::vector<Provenance> provenance;
  std::set<std::string> vendors;
  for (auto* e : entries) {
    if (out.size() == length) break;
    const std::size_t take = std::min(length - out.size(), e->bytes.size() - e->cursor);
    out.insert(out.end(), e->bytes.begin() + static_cast<std::ptrdiff_t>(e->cursor),
               e->bytes.begin() + static_cast<std::ptrdiff_t>(e->cursor + take));
    provenance.push_back({e->id, e->cursor, take});
    ledger_[e->id].emplace_back(e->cursor, take);
    vendors.insert(known_.at(e->id).second);
    e->cursor += take;
  }
  // Fully drained blocks leave the pools; the ledger keeps their ranges.
  for (auto& [key, queue] : pools_) {
    std::erase_if(queue, [](const Entry& e) { return e.cursor == e.bytes.size(); });
  }
  std::erase_if(pools_, [](const auto& kv) { return kv.second.empty(); });

  std::string tag = vendors.size() == 1 ? *vendors.begin() : "mixed";
  return KeyChunk(ids_.next_id(), std::move(out), std::move(provenance), std::move(tag));
}

std::vector<PoolStatus> KeyStore::pools() const {
  std::vector<PoolStatus> out;
  for (const auto& [key, queue] : pools_) {
    PoolStatus s{key, queue.size(), 0};
    for (const auto& e : queue) s.available += e.bytes.size() - e.cursor;
    out.push_back(s);
  }
  return out;
}

AuditReport KeyStore::audit() const {
  AuditReport r;
  r.ingested = ingested_;
  for (const auto& [key, queue] : pools_) {
    for (const auto& e : queue) r.available += e.bytes.size() - e.cursor;
  }
  for (const auto& [block, ranges] : ledger_) {
    auto sorted = ranges;
    std::ranges::sort(sorted);
    const std::size_t size = known_.contains(block) ? known_.at(block).first : 0;
    std::size_t end = 0;
    for (const auto& [off, len] : sorted) {
      if (off < end) r.problems.push_back(fmt::format("block {} byte {} consumed twice", block.hex(), off));
      if (off + len > size) r.problems.push_back(fmt::format("block {} range past its end", block.hex()));
      end = std::max(end, off + len);
      r.consumed += len;
    }
  }
  if (r.ingested != r.available + r.consumed) {
    r.problems.push_back(
        fmt::format("ingested {} != available {} + consumed {}", r.ingested, r.available, r.consumed));
  }
  r.ok = r.problems.empty();
  return r;
}

namespace {

std::array<std::uint8_t, kTagBytes> mac(const Id128& session, std::uint16_t hop, const Bytes& ciphertext,
                                        const Bytes& key) {
  ensure_crypto_ready();
  crypto_onetimeauth_state st;
  crypto_onetimeauth_init(&st, key.data());
  crypto_onetimeauth_update(&st, session.bytes.data(), session.bytes.size());
  const std::uint8_t hop_le[2] = {static_cast<std::uint8_t>(hop), static_cast<std::uint8_t>(hop >> 8)};
  crypto_onetimeauth_update(&st, hop_le, 2);
  crypto_onetimeauth_update(&st, ciphertext.data(), ciphertext.size());
  std::array<std::uint8_t, kTagBytes> tag{};
  crypto_onetimeauth_final(&st, tag.data());
  return tag;
}

void check_keys(std::size_t payload, const KeyChunk& hop_key, const KeyChunk& auth_key) {
  if (hop_key.size() != payload) {
    throw Error(Errc::length_mismatch,
                fmt::format("hop key is {} bytes for a {}-byte chunk", hop_key.size(), payload));
  }
  if (auth_key.size() != kAuthKeyBytes) {
    throw Error(Errc::length_mismatch, fmt::format("authentication key must be {} bytes", kAuthKeyBytes));
  }
  if (hop_key.spent() || auth_key.spent()) throw Error(Errc::reused_key, "relay key already used");
}

Bytes xor_bytes(const Bytes& a, const Bytes& b) {
  Bytes out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ^ b[i];
  return out;
}

}  // namespace

RelayMessage relay_encrypt(const Id128& session, std::uint16_t hop_index, const KeyChunk& chunk, KeyChunk& hop_key,
                           KeyChunk& auth_key) {
  check_keys(chunk.size(), hop_key, auth_key);
  hop_key.spend();
  auth_key.spend();
  RelayMessage msg;
  msg.session = session;
  msg.hop_index = hop_index;
  msg.ciphertext = xor_bytes(chunk.bytes(), hop_key.bytes());
  msg.tag = mac(session, hop_index, msg.ciphertext, auth_key.bytes());
  msg.key_ref = hop_key.provenance();
  msg.key_ref.insert(msg.key_ref.end(), auth_key.provenance().begin(), auth_key.provenance().end());
  return msg;
}

KeyChunk relay_decrypt(const RelayMessage& msg, KeyChunk& hop_key, KeyChunk& auth_key) {
  check_keys(msg.ciphertext.size(), hop_key, auth_key);
  hop_key.spend();
  auth_key.spend();
  ensure_crypto_ready();
  const auto expected = mac(msg.session, msg.hop_index, msg.ciphertext, auth_key.bytes());
  if (sodium_memcmp(expected.data(), msg.tag.data(), kTagBytes) != 0) {
    throw Error(Errc::auth_failure, fmt::format("authentication failed at hop {}", msg.hop_index));
  }
  return KeyChunk(hop_key.id(), xor_bytes(msg.ciphertext, hop_key.bytes()), hop_key.provenance(), "relay");
}

namespace {

void put_le(Bytes& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{in[at + static_cast<std::size_t>(i)]} << (8 * i);
  return v;
}

constexpr std::size_t kFixedRecord = 16 + 2 + 4 + kTagBytes;

}  // namespace

Bytes encode_wire(const RelayMessage& msg) {
  Bytes out;
  out.reserve(4 + kFixedRecord + msg.ciphertext.size());
  put_le(out, kFixedRecord + msg.ciphertext.size(), 4);
  out.insert(out.end(), msg.session.bytes.begin(), msg.session.bytes.end());
  put_le(out, msg.hop_index, 2);
  put_le(out, msg.ciphertext.size(), 4);
  out.insert(out.end(), msg.ciphertext.begin(), msg.ciphertext.end());
  out.insert(out.end(), msg.tag.begin(), msg.tag.end());
  return out;
}

RelayMessage decode_wire(std::span<const std::uint8_t> data, std::size_t* consumed) {
  if (data.size() < 4 + kFixedRecord) throw Error(Errc::length_mismatch, "truncated relay record");
  const std::size_t record = get_le(data, 0, 4);
  if (record < kFixedRecord || data.size() < 4 + record) throw Error(Errc::length_mismatch, "truncated relay record");
  RelayMessage msg;
  std::copy_n(data.begin() + 4, 16, msg.session.bytes.begin());
  msg.hop_index = static_cast<std::uint16_t>(get_le(data, 20, 2));
  const std::size_t len = get_le(data, 22, 4);
  if (len + kFixedRecord != record) throw Error(Errc::length_mismatch, "relay payload length disagrees with record");
  msg.ciphertext.assign(data.begin() + 26, data.begin() + 26 + static_cast<std::ptrdiff_t>(len));
  std::copy_n(data.begin() + 26 + static_cast<std::ptrdiff_t>(len), kTagBytes, msg.tag.begin());
  if (consumed) *consumed = 4 + record;
  return msg;
}

DeliveryRecord forward_key(const std::function<KeyStore&(const std::string&)>& store_of, const Id128& session,
                           const std::vector<std::string>& path, KeyChunk payload, const ForwardOptions& options) {
  if (path.size() < 2) throw Error(Errc::invalid_argument, "forwarding path needs at least two nodes");
  if (payload.size() == 0) throw Error(Errc::zero_length, "empty payload");
  const std::size_t need = payload.size() + kAuthKeyBytes;
  if (!options.hop_vendor.empty() && options.hop_vendor.size() != path.size() - 1) {
    throw Error(Errc::invalid_argument, "hop_vendor needs one entry per hop");
  }
  auto vendor = [&](std::size_t i) -> std::optional<std::string_view> {
    if (options.hop_vendor.empty() || !options.hop_vendor[i]) return std::nullopt;
    return *options.hop_vendor[i];
  };
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const std::size_t a = store_of(path[i]).available(path[i + 1], vendor(i));
    const std::size_t b = store_of(path[i + 1]).available(path[i], vendor(i));
    if (a < need || b < need) {
      throw Error(Errc::insufficient_key,
                  fmt::format("insufficient key at hop {} ({} - {}): available {}, requested {}", i + 1, path[i],
                              path[i + 1], std::min(a, b), need));
    }
  }

  KeyChunk carried = std::move(payload);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const auto hop = static_cast<std::uint16_t>(i + 1);
    KeyStore& tx = store_of(path[i]);
    KeyStore& rx = store_of(path[i + 1]);
    KeyChunk tx_key = tx.reserve(path[i + 1], carried.size(), vendor(i));
    KeyChunk tx_auth = tx.reserve(path[i + 1], kAuthKeyBytes, vendor(i));
    Bytes wire = encode_wire(relay_encrypt(session, hop, carried, tx_key, tx_auth));
    if (options.on_wire) options.on_wire(hop, wire);

    KeyChunk rx_key = rx.reserve(path[i], carried.size(), vendor(i));
    KeyChunk rx_auth = rx.reserve(path[i], kAuthKeyBytes, vendor(i));
    RelayMessage received;
    try {
      received = decode_wire(wire);
    } catch (const Error&) {
      throw Error(Errc::auth_failure, fmt::format("authentication failed at hop {}: malformed record", hop));
    }
    if (received.ciphertext.size() != rx_key.size() || received.session != session || received.hop_index != hop) {
      throw Error(Errc::auth_failure, fmt::format("authentication failed at hop {}", hop));
    }
    carried = relay_decrypt(received, rx_key, rx_auth);
  }
  return DeliveryRecord{session, path, std::move(carried), path.size() - 1, need};
}

KeyChunk combine_streams(std::span<const KeyChunk> chunks) {
  if (chunks.size() < 2) throw Error(Errc::invalid_argument, "combining needs at least two chunks");
  std::vector<std::string> tags;
  for (const auto& c : chunks) {
    if (c.size() != chunks.front().size()) throw Error(Errc::length_mismatch, "chunks differ in length");
    std::string_view t = c.stream_tag();
    if (t.starts_with("combined(") && t.ends_with(")")) {
      t = t.substr(9, t.size() - 10);
      std::size_t start = 0;
      while (start <= t.size()) {
        const std::size_t comma = t.find(',', start);
        const std::size_t end = comma == std::string_view::npos ? t.size() : comma;
        tags.emplace_back(t.substr(start, end - start));
        start = end + 1;
      }
    } else {
      tags.emplace_back(t);
    }
  }
  std::ranges::sort(tags);
  if (std::ranges::adjacent_find(tags) != tags.end()) {
    throw Error(Errc::duplicate_stream, fmt::format("stream '{}' combined with itself", *std::ranges::adjacent_find(tags)));
  }

  Bytes out = chunks.front().bytes();
  std::vector<Provenance> provenance;
  std::vector<Id128> ids;
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    if (k > 0) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] ^= chunks[k].bytes()[i];
    }
    provenance.insert(provenance.end(), chunks[k].provenance().begin(), chunks[k].provenance().end());
    ids.push_back(chunks[k].id());
  }
  // Order-independent id so combine(A, B) and combine(B, A) agree.
  std::ranges::sort(ids);
  ensure_crypto_ready();
  Id128 id;
  crypto_generichash(id.bytes.data(), id.bytes.size(), reinterpret_cast<const unsigned char*>(ids.data()),
                     ids.size() * sizeof(Id128), nullptr, 0);
  std::string tag = "combined(";
  for (std::size_t i = 0; i < tags.size(); ++i) tag += (i ? "," : "") + tags[i];
  tag += ")";
  return KeyChunk(id, std::move(out), std::move(provenance), std::move(tag));
}

}  // namespace qkdnet::lkms

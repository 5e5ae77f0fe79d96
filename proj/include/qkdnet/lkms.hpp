#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qkdnet/keystream.hpp"
#include "qkdnet/qkdsim.hpp"

namespace qkdnet::lkms {

using netmodel::KeyMode;

// Vendor label of the pool a source LKMS draws end keys from.
inline constexpr std::string_view kLocalVendor = "local";
// MAC key bytes consumed per hop on top of the payload.
inline constexpr std::size_t kAuthKeyBytes = 32;
inline constexpr std::size_t kTagBytes = 16;

struct Provenance {
  Id128 block;
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const Provenance&) const = default;
};

// Key material taken out of a store. Move-only: a chunk used as a hop or
// authentication key is marked spent and refuses a second use.
class KeyChunk {
 public:
  KeyChunk() = default;
  KeyChunk(Id128 id, Bytes bytes, std::vector<Provenance> provenance, std::string stream_tag);
  KeyChunk(const KeyChunk&) = delete;
  KeyChunk& operator=(const KeyChunk&) = delete;
  KeyChunk(KeyChunk&&) = default;
  KeyChunk& operator=(KeyChunk&&) = default;

  // Chunk outside any store, e.g. a test vector.
  static KeyChunk from_bytes(Bytes bytes, std::string stream_tag = "ext", Id128 id = {});

  const Id128& id() const { return id_; }
  const Bytes& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }
  const std::vector<Provenance>& provenance() const { return provenance_; }
  const std::string& stream_tag() const { return tag_; }
  void set_stream_tag(std::string tag) { tag_ = std::move(tag); }
  bool spent() const { return spent_; }

  // Marks the chunk used as key material; throws reused_key if it already was.
  void spend();

 private:
  Id128 id_;
  Bytes bytes_;
  std::vector<Provenance> provenance_;
  std::string tag_;
  bool spent_ = false;
};

struct PoolKey {
  std::string peer;
  std::string vendor;
  KeyMode mode = KeyMode::distilled;
  auto operator<=>(const PoolKey&) const = default;
};

struct PoolStatus {
  PoolKey key;
  std::size_t blocks = 0;
  std::size_t available = 0;
};

struct AuditReport {
  bool ok = true;
  std::size_t ingested = 0;
  std::size_t available = 0;
  std::size_t consumed = 0;
  std::vector<std::string> problems;
};

class KeyStore {
 public:
  explicit KeyStore(std::string node, std::uint64_t seed = 0);

  const std::string& node() const { return node_; }

  // Appends a block from a link terminating here. Throws foreign_block or
  // duplicate_block.
  void ingest(const qkdsim::KeyBlock& block);
  // Adds material from this node's own generator to the (self, local) pool.
  void ingest_local(Id128 id, Bytes bytes, std::uint64_t created_at);

  // FIFO extraction of `length` bytes from pools toward `peer`. Without a
  // vendor filter blocks of every vendor are merged by creation time.
  // All-or-nothing: throws zero_length, empty_pool or insufficient_key.
  KeyChunk reserve(std::string_view peer, std::size_t length, std::optional<std::string_view> vendor = std::nullopt,
                   KeyMode mode = KeyMode::distilled);

  std::size_t available(std::string_view peer, std::optional<std::string_view> vendor = std::nullopt,
                        KeyMode mode = KeyMode::distilled) const;
  std::vector<PoolStatus> pools() const;

  // Checks one-time-pad discipline and conservation over the whole store.
  AuditReport audit() const;
  const std::map<Id128, std::vector<std::pair<std::size_t, std::size_t>>>& ledger() const { return ledger_; }

 private:
  struct Entry {
    Id128 id;
    Bytes bytes;
    std::size_t cursor = 0;
    std::uint64_t created_at = 0;
    std::uint64_t seq = 0;
  };
  void add(const PoolKey& key, Id128 id, Bytes bytes, std::uint64_t created_at);
  std::vector<Entry*> matching(std::string_view peer, std::optional<std::string_view> vendor, KeyMode mode);

  std::string node_;
  KeyStream ids_;
  std::map<PoolKey, std::deque<Entry>> pools_;
  std::map<Id128, std::pair<std::size_t, std::string>> known_;  // block -> (size, pool vendor)
  std::map<Id128, std::vector<std::pair<std::size_t, std::size_t>>> ledger_;  // block -> [offset, length)
  std::uint64_t seq_ = 0;
  std::size_t ingested_ = 0;
};

struct RelayMessage {
  Id128 session;
  std::uint16_t hop_index = 0;
  Bytes ciphertext;
  std::array<std::uint8_t, kTagBytes> tag{};
  // Link-key provenance consumed by the sender; not on the wire.
  std::vector<Provenance> key_ref;

  bool operator==(const RelayMessage& o) const {
    return session == o.session && hop_index == o.hop_index && ciphertext == o.ciphertext && tag == o.tag;
  }
};

// ciphertext = chunk XOR hop_key; tag = Poly1305 under auth_key over
// (session || hop_index LE16 || ciphertext). Spends both keys.
RelayMessage relay_encrypt(const Id128& session, std::uint16_t hop_index, const KeyChunk& chunk, KeyChunk& hop_key,
                           KeyChunk& auth_key);

// Verifies before decrypting. Both keys are spent even when verification
// fails. Throws auth_failure or length_mismatch.
KeyChunk relay_decrypt(const RelayMessage& msg, KeyChunk& hop_key, KeyChunk& auth_key);

// Record framing: u32 LE record length, then session (16), hop_index u16,
// payload_len u32, ciphertext, tag (16).
Bytes encode_wire(const RelayMessage& msg);
// Decodes one record starting at `data`; `consumed` receives its size.
RelayMessage decode_wire(std::span<const std::uint8_t> data, std::size_t* consumed = nullptr);

struct DeliveryRecord {
  Id128 session;
  std::vector<std::string> path;
  KeyChunk delivered;
  std::size_t hops = 0;
  // Link-key bytes drawn at each endpoint of each hop.
  std::size_t consumed_per_hop = 0;
};

struct ForwardOptions {
  // Sees every wire record before the next node decodes it; tests use it to
  // tamper with ciphertext.
  std::function<void(std::size_t hop_index, Bytes& wire)> on_wire;
  // Optional vendor filter per hop (index 0 is the first hop). Parallel links
  // between two nodes share a peer, so this keeps a path on its own link.
  std::vector<std::optional<std::string>> hop_vendor;
};

// Hop-by-hop relay of `payload` along `path` (node ids). Every hop's pools
// are checked before any key is drawn, so a shortage consumes nothing.
// Throws insufficient_key or auth_failure naming the hop (1-based).
DeliveryRecord forward_key(const std::function<KeyStore&(const std::string&)>& store_of, const Id128& session,
                           const std::vector<std::string>& path, KeyChunk payload,
                           const ForwardOptions& options = {});

// Bytewise XOR of equal-length chunks with distinct stream tags. The result
// is tagged combined(t1,t2,...) with sorted, flattened tags.
KeyChunk combine_streams(std::span<const KeyChunk> chunks);

}  // namespace qkdnet::lkms

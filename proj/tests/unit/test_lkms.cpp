#include <doctest.h>
#include <fmt/format.h>

#include <map>
#include <random>

#include "qkdnet/error.hpp"
#include "qkdnet/lkms.hpp"

using namespace qkdnet;
using namespace qkdnet::lkms;
using qkdsim::KeyBlock;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::io_error;
}

Id128 id_of(std::uint64_t n) {
  Id128 id;
  for (int i = 0; i < 8; ++i) id.bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(n >> (8 * i));
  return id;
}

KeyBlock block(std::string a, std::string b, std::uint64_t n, std::size_t size, std::string vendor = "V",
               KeyMode mode = KeyMode::distilled) {
  KeyStream s(n, "test-block");
  return KeyBlock{id_of(n), a + "-" + b, a, b, vendor, a + "-" + b, s.bytes(size), n, mode};
}

// A line of nodes N0..Nk with `bytes` of shared key on each adjacent pair.
struct Line {
  std::map<std::string, KeyStore> stores;
  std::vector<std::string> path;

  Line(std::size_t hops, std::size_t bytes, std::uint64_t salt = 0) {
    for (std::size_t i = 0; i <= hops; ++i) {
      path.push_back(fmt::format("N{}", i));
      stores.emplace(path.back(), KeyStore(path.back(), i));
    }
    for (std::size_t i = 0; i < hops; ++i) {
      auto b = block(path[i], path[i + 1], salt * 1000 + i + 1, bytes, i % 2 ? "A" : "B");
      stores.at(path[i]).ingest(b);
      stores.at(path[i + 1]).ingest(b);
    }
  }
  KeyStore& operator()(const std::string& n) { return stores.at(n); }
};

}  // namespace

TEST_CASE("ingest sorts blocks into peer/vendor/mode pools") {
  KeyStore a("A");
  a.ingest(block("A", "B", 1, 100));
  CHECK(a.available("B") == 100);
  CHECK(a.pools().size() == 1);
  CHECK(code_of([&] { a.ingest(block("A", "B", 1, 100)); }) == Errc::duplicate_block);
  CHECK(code_of([&] { a.ingest(block("C", "B", 2, 100)); }) == Errc::foreign_block);

  a.ingest(block("B", "A", 3, 50, "V", KeyMode::raw));
  CHECK(a.available("B") == 100);
  CHECK(a.available("B", std::nullopt, KeyMode::raw) == 50);
  CHECK(a.pools().size() == 2);
}

TEST_CASE("reserve takes FIFO bytes and records them") {
  KeyStore a("A");
  auto b = block("A", "B", 1, 100);
  a.ingest(b);
  auto c = a.reserve("B", 40);
  CHECK(c.size() == 40);
  CHECK(Bytes(b.bytes.begin(), b.bytes.begin() + 40) == c.bytes());
  CHECK(a.available("B") == 60);
  CHECK(c.provenance() == std::vector<Provenance>{{b.id, 0, 40}});

  CHECK(code_of([&] { a.reserve("B", 0); }) == Errc::zero_length);
  try {
    a.reserve("B", 150);
    FAIL("expected insufficient key");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::insufficient_key);
    CHECK(std::string(e.what()).find("available 60, requested 150") != std::string::npos);
  }
  CHECK(a.available("B") == 60);
  CHECK(code_of([&] { a.reserve("Z", 1); }) == Errc::empty_pool);

  // Spanning two blocks in creation order.
  auto b2 = block("A", "B", 2, 30);
  a.ingest(b2);
  auto d = a.reserve("B", 70);
  CHECK(d.provenance() == std::vector<Provenance>{{b.id, 40, 60}, {b2.id, 0, 10}});
  CHECK(a.audit().ok);
  CHECK(a.audit().consumed == 110);
}

TEST_CASE("vendor filter selects one pool") {
  KeyStore a("A");
  a.ingest(block("A", "B", 1, 10, "X"));
  a.ingest(block("A", "B", 2, 10, "Y"));
  CHECK(a.reserve("B", 5, "Y").stream_tag() == "Y");
  CHECK(a.available("B", "X") == 10);
  CHECK(a.reserve("B", 15).stream_tag() == "mixed");
}

TEST_CASE("relay encrypt examples") {
  const Id128 session = id_of(99);
  {
    auto c = KeyChunk::from_bytes(Bytes(16, 0xFF));
    auto k = KeyChunk::from_bytes(Bytes(16, 0xFF));
    auto auth = KeyChunk::from_bytes(Bytes(32, 1));
    CHECK(relay_encrypt(session, 1, c, k, auth).ciphertext == Bytes(16, 0));
  }
  {
    KeyStream s(5, "payload");
    auto bytes = s.bytes(16);
    auto c = KeyChunk::from_bytes(bytes);
    auto k = KeyChunk::from_bytes(Bytes(16, 0));
    auto auth = KeyChunk::from_bytes(Bytes(32, 1));
    CHECK(relay_encrypt(session, 1, c, k, auth).ciphertext == bytes);
  }
}

TEST_CASE("relay round trip, tamper and desynchronisation") {
  KeyStream s(11, "relay");
  const Bytes payload = s.bytes(64), key = s.bytes(64 + 32 + 1);
  const Id128 session = id_of(7);
  auto slice = [&](std::size_t off, std::size_t n) { return Bytes(key.begin() + off, key.begin() + off + n); };

  auto send = [&](std::size_t off) {
    auto k = KeyChunk::from_bytes(slice(off, 64));
    auto a = KeyChunk::from_bytes(slice(off + 64, 32));
    return relay_encrypt(session, 3, KeyChunk::from_bytes(payload), k, a);
  };
  auto receive = [&](const RelayMessage& m, std::size_t off) {
    auto k = KeyChunk::from_bytes(slice(off, 64));
    auto a = KeyChunk::from_bytes(slice(off + 64, 32));
    return relay_decrypt(m, k, a);
  };

  auto msg = send(0);
  CHECK(receive(msg, 0).bytes() == payload);

  for (std::size_t bit : {0u, 7u, 200u, 511u}) {
    auto bad = msg;
    bad.ciphertext[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    CHECK(code_of([&] { receive(bad, 0); }) == Errc::auth_failure);
  }
  auto bad_tag = msg;
  bad_tag.tag[0] ^= 1;
  CHECK(code_of([&] { receive(bad_tag, 0); }) == Errc::auth_failure);
  auto bad_hop = msg;
  bad_hop.hop_index = 4;
  CHECK(code_of([&] { receive(bad_hop, 0); }) == Errc::auth_failure);

  // Receiver one byte ahead in the FIFO.
  CHECK(code_of([&] { receive(msg, 1); }) == Errc::auth_failure);
}

TEST_CASE("relay keys are single use and must match lengths") {
  auto c = KeyChunk::from_bytes(Bytes(8, 1));
  auto k = KeyChunk::from_bytes(Bytes(8, 2));
  auto a = KeyChunk::from_bytes(Bytes(32, 3));
  relay_encrypt(id_of(1), 1, c, k, a);
  CHECK(k.spent());
  CHECK(code_of([&] { relay_encrypt(id_of(1), 2, c, k, a); }) == Errc::reused_key);

  auto short_key = KeyChunk::from_bytes(Bytes(7, 2));
  auto a2 = KeyChunk::from_bytes(Bytes(32, 3));
  CHECK(code_of([&] { relay_encrypt(id_of(1), 1, c, short_key, a2); }) == Errc::length_mismatch);
  auto k3 = KeyChunk::from_bytes(Bytes(8, 2));
  auto short_auth = KeyChunk::from_bytes(Bytes(16, 3));
  CHECK(code_of([&] { relay_encrypt(id_of(1), 1, c, k3, short_auth); }) == Errc::length_mismatch);
}

TEST_CASE("wire format is little-endian and length-prefixed") {
  RelayMessage m;
  m.session = id_of(0x0102);
  m.hop_index = 0x0304;
  m.ciphertext = {0xAA, 0xBB, 0xCC};
  m.tag.fill(0x11);
  auto wire = encode_wire(m);
  REQUIRE(wire.size() == 4 + 16 + 2 + 4 + 3 + 16);
  CHECK(wire[0] == 41);
  CHECK(wire[1] == 0);
  CHECK(wire[4] == 0x02);
  CHECK(wire[5] == 0x01);
  CHECK(wire[20] == 0x04);
  CHECK(wire[21] == 0x03);
  CHECK(wire[22] == 3);
  CHECK(wire[26] == 0xAA);
  CHECK(wire.back() == 0x11);

  std::size_t used = 0;
  Bytes two = wire;
  two.insert(two.end(), wire.begin(), wire.end());
  CHECK(decode_wire(two, &used) == m);
  CHECK(used == wire.size());
  CHECK(decode_wire(std::span(two).subspan(used)) == m);
  CHECK(code_of([&] { decode_wire(std::span(wire).first(wire.size() - 1)); }) == Errc::length_mismatch);
}

TEST_CASE("forward_key delivers along a line and charges len + 32 per hop") {
  for (std::size_t hops = 1; hops <= 6; ++hops) {
    for (std::size_t len : {1u, 16u, 1024u}) {
      Line line(hops, 2000, hops * 10 + len);
      KeyStream s(hops, "payload");
      const Bytes payload = s.bytes(len);
      auto rec = forward_key(std::ref(line), id_of(hops), line.path, KeyChunk::from_bytes(payload));
      CHECK(rec.delivered.bytes() == payload);
      CHECK(rec.hops == hops);
      CHECK(rec.consumed_per_hop == len + 32);
      for (std::size_t i = 0; i < hops; ++i) {
        CHECK(line(line.path[i]).available(line.path[i + 1]) == 2000 - len - 32);
        CHECK(line(line.path[i + 1]).available(line.path[i]) == 2000 - len - 32);
      }
      for (auto& [n, st] : line.stores) CHECK(st.audit().ok);
    }
  }
}

TEST_CASE("forward_key shortage mid-path consumes nothing") {
  Line line(4, 200);
  line(line.path[1]).reserve(line.path[2], 150);
  try {
    forward_key(std::ref(line), id_of(1), line.path, KeyChunk::from_bytes(Bytes(64, 9)));
    FAIL("expected insufficient key");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::insufficient_key);
    CHECK(std::string(e.what()).find("hop 2") != std::string::npos);
  }
  CHECK(line(line.path[0]).available(line.path[1]) == 200);
  CHECK(line(line.path[3]).available(line.path[4]) == 200);
}

TEST_CASE("forward_key tamper aborts and destroys the hop keys") {
  Line line(3, 500);
  ForwardOptions opts;
  opts.on_wire = [](std::size_t hop, Bytes& wire) {
    if (hop == 2) wire[30] ^= 0x40;
  };
  try {
    forward_key(std::ref(line), id_of(1), line.path, KeyChunk::from_bytes(Bytes(64, 9)), opts);
    FAIL("expected auth failure");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::auth_failure);
    CHECK(std::string(e.what()).find("hop 2") != std::string::npos);
  }
  CHECK(line(line.path[1]).available(line.path[2]) == 500 - 96);
  CHECK(line(line.path[2]).available(line.path[1]) == 500 - 96);
  CHECK(line(line.path[2]).available(line.path[3]) == 500);
  for (auto& [n, st] : line.stores) CHECK(st.audit().ok);
}

TEST_CASE("forward_key detects an endpoint out of step") {
  Line line(2, 500);
  line(line.path[2]).reserve(line.path[1], 1);
  CHECK(code_of([&] { forward_key(std::ref(line), id_of(1), line.path, KeyChunk::from_bytes(Bytes(32, 1))); }) ==
        Errc::auth_failure);
}

TEST_CASE("combine streams") {
  KeyStream s(3, "combine");
  auto c = KeyChunk::from_bytes(s.bytes(32), "a");
  auto z = KeyChunk::from_bytes(Bytes(32, 0), "b");
  {
    std::vector<KeyChunk> v;
    v.push_back(KeyChunk::from_bytes(c.bytes(), "a"));
    v.push_back(KeyChunk::from_bytes(z.bytes(), "b"));
    auto r = combine_streams(v);
    CHECK(r.bytes() == c.bytes());
    CHECK(r.stream_tag() == "combined(a,b)");
  }
  auto x = KeyChunk::from_bytes(s.bytes(32), "x", id_of(1));
  auto y = KeyChunk::from_bytes(s.bytes(32), "y", id_of(2));
  auto w = KeyChunk::from_bytes(s.bytes(32), "w", id_of(3));
  auto pair = [](const KeyChunk& a, const KeyChunk& b) {
    std::vector<KeyChunk> v;
    v.push_back(KeyChunk::from_bytes(a.bytes(), a.stream_tag(), a.id()));
    v.push_back(KeyChunk::from_bytes(b.bytes(), b.stream_tag(), b.id()));
    return combine_streams(v);
  };
  auto xy = pair(x, y), yx = pair(y, x);
  CHECK(xy.bytes() == yx.bytes());
  CHECK(xy.stream_tag() == yx.stream_tag());
  CHECK(xy.id() == yx.id());
  // Associativity on bytes and tags.
  auto left = pair(xy, w), right = pair(x, pair(y, w));
  CHECK(left.bytes() == right.bytes());
  CHECK(left.stream_tag() == "combined(w,x,y)");
  CHECK(right.stream_tag() == left.stream_tag());

  CHECK(code_of([&] { pair(x, KeyChunk::from_bytes(Bytes(31, 0), "q")); }) == Errc::length_mismatch);
  CHECK(code_of([&] { pair(x, KeyChunk::from_bytes(Bytes(32, 0), "x")); }) == Errc::duplicate_stream);
  CHECK(code_of([&] { pair(xy, x); }) == Errc::duplicate_stream);
}

TEST_CASE("two vendor paths combine to the same key at both ends") {
  // Diamond S - {A, B} - D; path via A carries vendor X, via B vendor Y.
  std::map<std::string, KeyStore> st;
  for (const char* n : {"S", "A", "B", "C", "D"}) st.emplace(n, KeyStore(n, 1));
  auto link = [&](std::string a, std::string b, std::uint64_t n, std::string v) {
    auto blk = block(a, b, n, 1000, v);
    st.at(a).ingest(blk);
    st.at(b).ingest(blk);
  };
  link("S", "A", 1, "X");
  link("A", "C", 2, "X");
  link("C", "D", 3, "X");
  link("S", "B", 4, "Y");
  link("B", "D", 5, "Y");
  auto store_of = [&](const std::string& n) -> KeyStore& { return st.at(n); };
  KeyStream gen(9, "end-keys");
  const Bytes k1 = gen.bytes(32), k2 = gen.bytes(32);
  auto r1 = forward_key(store_of, id_of(1), {"S", "A", "C", "D"}, KeyChunk::from_bytes(k1, "p1"));
  auto r2 = forward_key(store_of, id_of(1), {"S", "B", "D"}, KeyChunk::from_bytes(k2, "p2"));

  std::vector<KeyChunk> src, dst;
  src.push_back(KeyChunk::from_bytes(k1, "p1"));
  src.push_back(KeyChunk::from_bytes(k2, "p2"));
  r1.delivered.set_stream_tag("p1");
  r2.delivered.set_stream_tag("p2");
  dst.push_back(std::move(r1.delivered));
  dst.push_back(std::move(r2.delivered));
  auto a = combine_streams(src), b = combine_streams(dst);
  CHECK(a.bytes() == b.bytes());
  CHECK(a.stream_tag() == b.stream_tag());
}

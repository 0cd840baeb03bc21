#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "dcd/checkpoint.hpp"
#include "dcd/rng.hpp"

using namespace dcd;

namespace {

ModelGraph desk(DeskKind kind, double latent_multiplier = 1) {
  DeskOptions o;
  o.kind = kind;
  o.kernel = 3;
  o.dcd.latent_multiplier = latent_multiplier;
  return build_desk(o);
}

Tensor input(std::uint64_t seed) {
  Rng rng(seed);
  return rng.uniform_tensor({3, 8, 16, 16}, -1, 1);
}

// A trained-looking network: every parameter and buffer moved off its init.
void perturb(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  for (const NamedTensor& t : net.state())
    for (double& v : t.tensor->values()) v += rng.uniform(-0.1, 0.1);
}

void append_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s += static_cast<char>(v >> (8 * i) & 0xff);
}
void append_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s += static_cast<char>(v >> (8 * i) & 0xff);
}

}  // namespace

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("byte layout of a one-tensor checkpoint") {
  Checkpoint c;
  c.metadata = "m";
  Tensor t({2, 1});
  t[0] = 1.0;
  t[1] = -2.5;
  c.entries.push_back({"w", t, 0});

  std::string payload;
  for (double v : {1.0, -2.5}) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_u64(payload, bits);
  }
  std::string expected = "DCD1";
  append_u32(expected, 1);
  append_u32(expected, 1);
  expected += "m";
  append_u32(expected, 1);
  append_u32(expected, 1);
  expected += "w";
  append_u32(expected, 2);
  append_u64(expected, 2);
  append_u64(expected, 1);
  append_u64(expected, 0);
  append_u64(expected, 16);
  expected += payload;
  append_u64(expected, fnv1a64(payload));
  CHECK(encode_checkpoint(c) == expected);
}

TEST_CASE("round trip is bit-exact") {
  Network net(desk(DeskKind::Dcd), 3);
  perturb(net, 4);
  const std::string bytes = encode_checkpoint(capture(net, "config text"));
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.metadata == "config text");
  const auto state = net.state();
  REQUIRE(back.entries.size() == state.size());
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    CHECK(back.entries[i].name == state[i].name);
    CHECK(back.entries[i].value == *state[i].tensor);
    CHECK(back.entries[i].offset == offset);
    offset += state[i].tensor->size() * 8;
  }
  CHECK(encode_checkpoint(back) == bytes);

  Network fresh(desk(DeskKind::Dcd), 99);
  const Tensor x = input(5);
  CHECK_FALSE(fresh.predict(x) == net.predict(x));
  restore(fresh, back);
  CHECK(fresh.predict(x) == net.predict(x));
}

TEST_CASE("file round trip") {
  Network net(desk(DeskKind::Vanilla), 3);
  perturb(net, 8);
  const auto path = (std::filesystem::temp_directory_path() / "dcd_test.ckpt").string();
  save_checkpoint(path, net, "meta");
  Network fresh(desk(DeskKind::Vanilla), 1);
  restore(fresh, read_checkpoint(path));
  const Tensor x = input(9);
  CHECK(fresh.predict(x) == net.predict(x));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_checkpoint(path), Error);
}

TEST_CASE("corruption is reported distinctly") {
  Network net(desk(DeskKind::Dcd), 3);
  const std::string bytes = encode_checkpoint(capture(net, "meta"));

  SUBCASE("truncated payload") {
    for (std::size_t cut : {bytes.size() - 1, bytes.size() - 8, bytes.size() - 100, bytes.size() / 2, std::size_t{10}})
      CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, cut)), ChecksumError);
  }
  SUBCASE("flipped payload byte") {
    std::string bad = bytes;
    bad[bad.size() - 20] ^= 0x01;
    CHECK_THROWS_AS(decode_checkpoint(bad), ChecksumError);
  }
  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), BadMagicError);
    CHECK_THROWS_AS(decode_checkpoint("DC"), BadMagicError);
  }
  SUBCASE("unknown version") {
    std::string bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(decode_checkpoint(bad), VersionError);
  }
  SUBCASE("trailing bytes") {
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
  }
}

TEST_CASE("changed latent multiplier names the first mismatched tensor") {
  Network small(desk(DeskKind::Dcd, 1), 3), wide(desk(DeskKind::Dcd, 2), 3);
  const auto a = small.state(), b = wide.state();
  REQUIRE(a.size() == b.size());
  std::string first;
  for (std::size_t i = 0; i < a.size() && first.empty(); ++i) {
    REQUIRE(a[i].name == b[i].name);
    if (a[i].tensor->shape() != b[i].tensor->shape()) first = a[i].name;
  }
  REQUIRE_FALSE(first.empty());

  const Tensor x = input(2);
  const Tensor before = wide.predict(x);
  try {
    restore(wide, capture(small));
    FAIL("expected a shape mismatch");
  } catch (const ShapeMismatchError& e) {
    CHECK(e.tensor() == first);
    CHECK(std::string(e.what()).find(first) != std::string::npos);
  }
  // Validation happens before any tensor is written.
  CHECK(wide.predict(x) == before);
}

TEST_CASE("missing and extra tensors") {
  Network stat(desk(DeskKind::Static), 3), dyn(desk(DeskKind::Dcd), 3);
  CHECK_THROWS_AS(restore(dyn, capture(stat)), ShapeMismatchError);
  CHECK_THROWS_AS(restore(stat, capture(dyn)), ShapeMismatchError);
  Checkpoint dup = capture(stat);
  dup.entries.push_back(dup.entries.front());
  CHECK_THROWS_AS(restore(stat, dup), CheckpointError);
}

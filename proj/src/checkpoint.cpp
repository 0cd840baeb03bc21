#include "dcd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dcd {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : bytes_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ChecksumError(std::string("checkpoint truncated while reading ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out = "DCD1";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.metadata.size()));
  out += c.metadata;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : c.entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, offset);
    offset += e.value.size() * sizeof(double);
  }
  std::string payload;
  payload.reserve(offset);
  for (const auto& e : c.entries)
    for (double v : e.value.values()) put<double>(payload, v);
  put<std::uint64_t>(out, payload.size());
  out += payload;
  put<std::uint64_t>(out, fnv1a64(payload));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "DCD1") throw BadMagicError("not a checkpoint: bad magic bytes");
  Reader r(bytes.substr(4));
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.metadata = std::string(r.take(r.get<std::uint32_t>("metadata length"), "metadata"));
  const auto count = r.get<std::uint32_t>("entry count");
  struct Meta {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Meta> metas;
  for (std::uint32_t i = 0; i < count; ++i) {
    Meta m;
    m.name = std::string(r.take(r.get<std::uint32_t>("name length"), "name"));
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 16) throw CheckpointError("checkpoint entry '" + m.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) m.shape.push_back(r.get<std::uint64_t>("extent"));
    m.offset = r.get<std::uint64_t>("offset");
    metas.push_back(std::move(m));
  }
  const auto payload_len = r.get<std::uint64_t>("payload length");
  if (payload_len > r.remaining()) throw ChecksumError("checkpoint payload truncated");
  const std::string_view payload = r.take(payload_len, "payload");
  const auto checksum = r.get<std::uint64_t>("checksum");
  if (checksum != fnv1a64(payload)) throw ChecksumError("checkpoint checksum mismatch");
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint checksum");

  // Entries must tile the payload in order, without gaps or overlap.
  std::uint64_t expected = 0;
  for (const Meta& m : metas) {
    if (m.offset != expected) throw CheckpointError("checkpoint entry '" + m.name + "' has a bad offset");
    expected += numel(m.shape) * sizeof(double);
  }
  if (expected != payload_len) throw CheckpointError("checkpoint manifest does not cover the payload");

  for (Meta& m : metas) {
    Reader pr(payload.substr(m.offset, numel(m.shape) * sizeof(double)));
    Tensor t(m.shape);
    for (double& v : t.values()) v = pr.get<double>("value");
    c.entries.push_back({std::move(m.name), std::move(t), m.offset});
  }
  return c;
}

Checkpoint capture(Network& net, std::string metadata) {
  Checkpoint c;
  c.metadata = std::move(metadata);
  for (const NamedTensor& t : net.state()) c.entries.push_back({t.name, *t.tensor, 0});
  return c;
}

void restore(Network& net, const Checkpoint& c) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : c.entries)
    if (!by_name.emplace(e.name, &e.value).second) throw CheckpointError("checkpoint repeats tensor '" + e.name + "'");
  const auto state = net.state();
  for (const NamedTensor& t : state) {
    const auto it = by_name.find(t.name);
    if (it == by_name.end()) throw ShapeMismatchError(t.name, "tensor '" + t.name + "' is missing from the checkpoint");
    if (it->second->shape() != t.tensor->shape()) {
      throw ShapeMismatchError(t.name, "tensor '" + t.name + "' has shape " + to_string(it->second->shape()) +
                                           " in the checkpoint but " + to_string(t.tensor->shape()) + " in the model");
    }
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    for (const auto& e : c.entries)
      if (by_name.count(e.name)) throw ShapeMismatchError(e.name, "checkpoint tensor '" + e.name + "' is not in the model");
  }
  for (const NamedTensor& t : state)
    for (const auto& e : c.entries)
      if (e.name == t.name) {
        *t.tensor = e.value;
        break;
      }
}

void save_checkpoint(const std::string& path, Network& net, const std::string& metadata) {
  const std::string bytes = encode_checkpoint(capture(net, metadata));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace dcd

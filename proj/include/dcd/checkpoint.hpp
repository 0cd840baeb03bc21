#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   "DCD1"                      magic
//   u32 version                 currently 1
//   u32 meta_len, meta bytes    free-form text (the run config)
//   u32 count                   manifest entries, in payload order
//     u32 name_len, name bytes
//     u32 rank, u64 dims[rank]
//     u64 offset                byte offset of the tensor in the payload
//   u64 payload_len
//   payload                     f64 values, row-major, concatenated
//   u64 checksum                FNV-1a 64 of the payload bytes

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dcd/network.hpp"

namespace dcd {

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
// Payload checksum mismatch or truncated file.
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ShapeMismatchError : public CheckpointError {
 public:
  ShapeMismatchError(std::string tensor, const std::string& what)
      : CheckpointError(what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Tensor value;
  std::uint64_t offset = 0;
};

struct Checkpoint {
  std::string metadata;
  std::vector<CheckpointEntry> entries;
};

std::uint64_t fnv1a64(std::string_view bytes);

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);

// Snapshot of all parameters and buffers.
Checkpoint capture(Network& net, std::string metadata = {});
// Validates every name and shape against the network before writing any
// value; the first offending tensor (network order) is named in the error.
void restore(Network& net, const Checkpoint& c);

void save_checkpoint(const std::string& path, Network& net, const std::string& metadata = {});
Checkpoint read_checkpoint(const std::string& path);

}  // namespace dcd

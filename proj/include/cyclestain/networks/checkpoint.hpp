#pragma once

// Checkpoint container:
//   bytes 0..7    magic "CYSTCKPT"
//   bytes 8..11   format version, uint32 little-endian
//   bytes 12..19  header length H, uint64 little-endian
//   H bytes       UTF-8 JSON header: {"version", "config", "meta", "tensors": [
//                   {"name", "shape": [n,c,h,w], "offset", "count"}, ...]}
//   payload       float32 little-endian values, offsets in bytes from payload start

#include <cstdint>
#include <filesystem>

#include "cyclestain/networks/param_store.hpp"
#include "json.hpp"

namespace cyclestain {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  ParamStore tensors;
};

/// Writes atomically (temporary file + rename).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Rejects bad magic, version mismatch and truncated payloads with DataError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cyclestain

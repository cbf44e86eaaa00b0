#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "battta/model.hpp"
#include "battta/tensor.hpp"
#include "json.hpp"

namespace battta::clip {

// Named-tensor container. On disk:
//   "BTC1" | version u32 | count u32 |
//   count x { name_len u16 | name | is_layernorm u8 | ndim u8 | dims u64... | f64 payload } |
//   JSON metadata (rest of file)
// All integers and floats little-endian.
struct NamedTensor {
  std::string name;
  bool is_layernorm = false;
  Tensor value;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const NamedTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode(const Checkpoint& ckpt);
// Throws CheckpointError on malformed input.
Checkpoint decode(std::span<const std::uint8_t> bytes);

void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

// Deep copy of every parameter; meta carries {"arch": ..., "tau": ...}.
Checkpoint snapshot(const DualEncoder& model);
// Copies the checkpoint into the model's existing tensors. Throws
// CheckpointError on architecture mismatch or a missing/mis-shaped tensor.
void restore(DualEncoder& model, const Checkpoint& ckpt);
// Builds a model from the stored architecture and restores into it.
DualEncoder model_from_checkpoint(const Checkpoint& ckpt);

// FNV-1a 64-bit hash of `bytes` as 16 hex digits.
std::string fingerprint(std::span<const std::uint8_t> bytes);

}  // namespace battta::clip

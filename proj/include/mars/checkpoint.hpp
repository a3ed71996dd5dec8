#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mars/numerics.hpp"

// Binary model snapshots. Layout: magic "MARS", format version, config text,
// best epoch and its validation metric, then length-prefixed named tensors
// (name, shape, little-endian 64-bit floats) and a trailing CRC32 of the
// whole stream. Round trips are bit-exact.

namespace mars::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
  std::string config_text;  // flat key = value lines
  std::uint32_t epoch = 0;
  double metric = 0.0;  // validation recall@50 at that epoch
  std::vector<std::pair<std::string, num::Tensor>> tensors;

  const num::Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& c);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint values into the live tensors by name. Every live tensor
// must be present with a matching shape; unknown names in the file error.
void restore_parameters(
    const Checkpoint& c,
    const std::vector<std::pair<std::string, num::Tensor>>& live);

}  // namespace mars::ckpt

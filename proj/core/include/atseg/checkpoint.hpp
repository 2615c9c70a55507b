#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "atseg/adam.hpp"
#include "atseg/segnet.hpp"

namespace atseg {

inline constexpr char kCheckpointMagic[] = "ATSEG1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Model, optimizer state and the training position it was taken at.
struct Checkpoint {
  SegModel model;
  AdamState optimizer;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  /// Validation Dice at `epoch`; NaN when no validation has run yet.
  double val_dice = std::numeric_limits<double>::quiet_NaN();

  explicit Checkpoint(SegModel m) : model(std::move(m)) {}
};

/// Little-endian layout:
///
///   "ATSEG1"  u32 version
///   u32 base_channels, depth, in_channels, image_h, image_w, pooled_size
///   f64 dropout_rate  u8 adaptive_threshold  u64 seed  u32 epoch  f64 val_dice
///   u32 tensor_count, then per tensor: u32 name_len, name, u32 rank, u64 dims[rank], f32 payload
///   u8 has_optimizer; if set: u64 step, then m and v payloads in tensor order
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

/// Throws VersionError for another format version and ParseError for bad magic,
/// truncation, trailing bytes, unknown, duplicate, missing or misshapen tensors.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace atseg

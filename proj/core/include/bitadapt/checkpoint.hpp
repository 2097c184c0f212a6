#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bitadapt/models.hpp"

namespace bitadapt {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Run metadata stored after the tensor table as `key=value` lines.
struct CheckpointMeta {
  std::string model_kind;
  std::size_t model_width = 0;
  Shape input_shape;
  std::size_t epoch = 0;
  std::string rng_state;
};

struct Checkpoint {
  Params params;
  CheckpointMeta meta;
  /// Bytes of raw parameter values (4 per scalar), i.e. the stored model size.
  std::uint64_t payload_bytes = 0;
};

/// Layout, all little-endian: "MBQT", u16 version, u32 tensor count; per
/// tensor u16 name length, name bytes, u8 rank, u32 dims, f32 values; then a
/// u32 length and that many bytes of metadata text.
std::vector<unsigned char> encode_checkpoint(const Params& params, const CheckpointMeta& meta);
/// Throws CheckpointError (bad magic, unsupported version, truncated,
/// malformed).
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Params& params, const CheckpointMeta& meta);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model description recorded in a checkpoint.
ModelSpec checkpoint_model(const Checkpoint& ckpt);

}  // namespace bitadapt

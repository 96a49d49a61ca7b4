#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rsam/layers.hpp"
#include "rsam/run_config.hpp"

namespace rsam {

inline constexpr std::uint16_t kCheckpointVersion = 1;

// A stored tensor does not line up with the model the stored config builds.
class CheckpointMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

struct Checkpoint {
  RunConfig config;
  LayerParams params;
};

// Layout, little-endian throughout:
//   "RSAM" | u16 version | u32 length + config text (UTF-8)
//   then until end of file, per tensor in registry order:
//   u32 length + name | u32 rank | u32 dims[rank] | f32 values[prod(dims)]
std::vector<std::uint8_t> encode_checkpoint(const LayerParams& params, const RunConfig& config);

// Rebuilds the registry from the stored config and fills it from the stored
// tensors; names, order and shapes must match exactly.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void checkpoint_save(const LayerParams& params, const RunConfig& config, const std::filesystem::path& path);
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace rsam

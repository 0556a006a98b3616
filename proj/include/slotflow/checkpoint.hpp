#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "slotflow/model.hpp"

namespace slotflow {

/// Archive layout: 8-byte magic "SLOTFLOW", u32 format version, u64 index
/// length, JSON index, then the little-endian f32 payload. Tensor byte
/// offsets in the index are relative to the start of the payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::vector<int> stages_completed;
  std::int64_t step = 0;

  bool has_stage(int s) const;
  void mark_stage(int s);
};

void save_checkpoint(const std::filesystem::path& path, Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

/// Rebuilds the model from the stored config and restores every tensor.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Restores tensors into an existing model; shapes must match the model's config.
CheckpointMeta restore_checkpoint(const std::filesystem::path& path, Model& model);

}  // namespace slotflow

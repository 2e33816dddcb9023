#pragma once

#include "rcnn/architecture.hpp"

#include <filesystem>

namespace rcnn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Checkpoint layout, little-endian:
///   "RCNN", version u16,
///   spec: name (u16 length + bytes), lateral u8, topdown u8, kernel u16,
///         features u16, time_steps u16, in_channels u16, classes u16,
///   every trainable tensor as f32 in for_each_trainable order,
///   per layer and time step: initialized u8, running mean f32[features],
///         running var f32[features],
///   crc32 u32 of all preceding bytes.
void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);

ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace rcnn

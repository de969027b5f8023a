#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tierprune/model.hpp"

namespace tierprune {

/// Checkpoint container, all integers little-endian:
///
///   "TPRN"  u32 version
///   u32 image_size, patch_size, embed_dim, num_heads, depth, mlp_ratio, num_classes
///   u64 seed
///   u32 parameter count, then per parameter (Model::parameters() order):
///       u32 name length, name bytes, u32 rank, u32 extents[rank], f32 values[numel]
///   u32 group count, then per LinearGroup (enumeration order):
///       u32 layer_number, u64 bit count, ceil(bits/8) bytes of mask, LSB first
///
/// is_skip flags and gradients are not stored.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_model(const Model& model);
/// Throws FormatError on bad magic, unsupported version, truncation or a
/// parameter/mask layout that does not match the stored config.
Model deserialize_model(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace tierprune

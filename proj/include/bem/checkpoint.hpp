#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "bem/backbone.hpp"
#include "bem/variational.hpp"

namespace bem {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian:
//
//   "BEMC" | u32 version | u32 stage | u32 model kind
//   | u32 in, out, base, levels, blocks, activation
//   | tensor table
//   | (stage 1, Bayesian) f64 beta | u64 step | prior tensor table
//   | u32 CRC-32 of every preceding byte
//
// A tensor table is u32 count followed by entries of
//   u32 name length | name | u8 dtype (1 = f32, 2 = f64) | u32 rank
//   | u64 dims... | payload (f32 or f64 per element)
struct Checkpoint {
    std::uint32_t stage = 1;
    Model model;
    std::optional<AdaptivePrior> prior;
};

std::vector<std::uint8_t> encode_checkpoint(std::uint32_t stage, const Model& model,
                                            const AdaptivePrior* prior = nullptr);
// Throws CheckpointError on a bad magic, CRC, version or table.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::uint32_t stage, const Model& model,
                     const AdaptivePrior* prior = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// load_checkpoint plus a stage check.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint32_t expected_stage);

}  // namespace bem

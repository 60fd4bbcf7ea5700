#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bem/tensor.hpp"

namespace bem {

// Binary netpbm, 8 bits per sample: P6 for 3-channel and P5 for 1-channel
// tensors. Values are clamped to [0,1] and rounded to the nearest of 256
// levels on encode; decoding maps byte b to b / maxval.
std::vector<std::uint8_t> encode_ppm(const Tensor& img);
Tensor decode_ppm(std::span<const std::uint8_t> bytes);

void write_ppm(const std::filesystem::path& path, const Tensor& img);
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace bem

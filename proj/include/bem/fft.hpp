#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "bem/tensor.hpp"

namespace bem {

// Half spectrum of a real C x H x W tensor: per channel, H rows of W/2 + 1
// complex bins (non-negative frequencies along W). Bin (0,0) is the DC term.
struct Spectrum {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;  // spatial width of the real signal
    std::vector<std::complex<double>> bins;

    std::size_t half_width() const noexcept { return width / 2 + 1; }
    std::complex<double>& at(std::size_t c, std::size_t u, std::size_t v) {
        return bins[(c * height + u) * half_width() + v];
    }
    const std::complex<double>& at(std::size_t c, std::size_t u, std::size_t v) const {
        return bins[(c * height + u) * half_width() + v];
    }
};

// Unnormalized forward 2-D DFT per channel. Every H, W >= 1 is supported
// (mixed-radix, no padding).
Spectrum rfft2(const Tensor& input);

// Inverse of rfft2, including the 1/(H*W) normalization. Throws
// DimensionError when the spectrum layout does not match (H, W).
Tensor irfft2(const Spectrum& spectrum, std::size_t height, std::size_t width, DType dtype = DType::F64);

}  // namespace bem

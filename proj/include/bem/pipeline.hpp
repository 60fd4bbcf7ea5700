#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "bem/backbone.hpp"
#include "bem/random.hpp"
#include "bem/tensor.hpp"

namespace bem {

// Exact positive fraction num/den, used for the downscale factor so that
// "H * r is an integer" can be checked without rounding.
struct Rational {
    std::int64_t num = 1;
    std::int64_t den = 16;

    double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
    // Accepts "1/16", "0.25" or "1".
    static Rational parse(const std::string& text);
    std::string to_string() const;
    // n * r, throwing ConfigError when it is not a positive integer.
    std::size_t scale(std::size_t n) const;

    friend bool operator==(const Rational&, const Rational&) = default;
};

struct PipelineConfig {
    Rational r{1, 16};
    double alpha = 0.025;
    // Defaults to r so the retained band fits the coarse grid.
    std::optional<double> lp_keep_fraction;

    double keep_fraction() const { return lp_keep_fraction.value_or(r.value()); }
    void validate() const;
    std::pair<std::size_t, std::size_t> coarse_size(std::size_t h, std::size_t w) const {
        return {r.scale(h), r.scale(w)};
    }
};

// FFT low-pass: keeps bins whose normalized frequency min(k, N-k)/N is at most
// keep_fraction/2 along both axes. The mask is symmetric, so the output stays
// real; it is a projection, hence idempotent and energy non-increasing.
Tensor lowpass(const Tensor& x, double keep_fraction);

// Down(LP(x), r): low-pass, then bilinear resize to (H*r, W*r).
Tensor coarse_input(const Tensor& x, const PipelineConfig& cfg);

// (x + alpha*z) * z elementwise.
Tensor compose_illumination(const Tensor& x, const Tensor& z, double alpha);

// Non-negative root z of (x + alpha*z)*z = y, i.e.
// (sqrt(x^2 + 4*alpha*y) - x) / (2*alpha), evaluated as
// 2y / (sqrt(x^2 + 4*alpha*y) + x) when x >= 0 to avoid cancellation.
Tensor invert_illumination(const Tensor& x, const Tensor& y, double alpha);

// Ground-truth illumination LP(invert(x, y, alpha)) at full resolution.
Tensor illumination_target(const Tensor& x, const Tensor& y, const PipelineConfig& cfg);

// Stage-I regression target: the ground-truth illumination resized to the
// coarse grid.
Tensor coarse_illumination_target(const Tensor& x, const Tensor& y, const PipelineConfig& cfg);

// One posterior-sampled Stage-I pass; z stays at coarse resolution.
Tensor stage1_sample(const Tensor& x, const Model& stage1, const PipelineConfig& cfg, EpsilonSource& eps);

// G([x, z_up]) at full resolution.
Tensor stage2_forward(const Tensor& x, const Tensor& z_up, const Model& stage2);

}  // namespace bem

#include "bem/random.hpp"

#include <cmath>
#include <numbers>

namespace bem {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// 53-bit uniform in (0, 1]; never zero so the log in Box-Muller is finite.
double unit_open(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

std::uint64_t stream_id(std::string_view label) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

double EpsilonSource::at(std::uint64_t index) const noexcept {
    const std::uint64_t key = splitmix64(seed_ ^ splitmix64(stream_));
    const std::uint64_t a = splitmix64(key ^ splitmix64(2 * index));
    const std::uint64_t b = splitmix64(key ^ splitmix64(2 * index + 1));
    const double u1 = unit_open(a);
    const double u2 = unit_open(b);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor EpsilonSource::draw(const Shape& shape, DType dtype) {
    Tensor t(shape, dtype);
    for (auto& v : t.data()) v = next();
    t.publish("EpsilonSource::draw");
    return t;
}

Rng::Rng(std::uint64_t seed, std::string_view label) : state_(splitmix64(seed ^ stream_id(label))) {}

std::uint64_t Rng::next_u64() noexcept {
    state_ += kGolden;
    return splitmix64(state_);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) noexcept {
    // Multiply-shift; bias is below 2^-64 * n.
    return static_cast<std::size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double Rng::normal() noexcept {
    const double u1 = unit_open(next_u64());
    const double u2 = unit_open(next_u64());
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace bem

#pragma once

#include <cstdint>
#include <string_view>

#include "bem/tensor.hpp"

namespace bem {

// Stable 64-bit id for a stream label such as "stage1", "data" or "infer:7".
std::uint64_t stream_id(std::string_view label);

// Counter-based standard-normal source. The value of draw i on stream s under
// seed k is a pure function of (k, s, i), so noise can be replayed exactly and
// streams can be consumed from different threads without coordination.
class EpsilonSource {
  public:
    EpsilonSource(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}
    EpsilonSource(std::uint64_t seed, std::string_view label) : EpsilonSource(seed, stream_id(label)) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t position() const noexcept { return next_; }
    void seek(std::uint64_t index) noexcept { next_ = index; }

    // N(0,1) value at an absolute draw index; does not move the cursor.
    double at(std::uint64_t index) const noexcept;

    double next() noexcept { return at(next_++); }

    // Tensor of fresh draws; advances the cursor by numel(shape).
    Tensor draw(const Shape& shape, DType dtype = DType::F64);

  private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t next_ = 0;
};

// Small sequential generator for data pipeline decisions (shuffles, crops,
// target choice). Output depends only on the seed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}
    Rng(std::uint64_t seed, std::string_view label);

    std::uint64_t next_u64() noexcept;
    // Uniform in [0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::size_t below(std::size_t n) noexcept;
    double normal() noexcept;

  private:
    std::uint64_t state_;
};

}  // namespace bem

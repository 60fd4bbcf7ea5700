#include "bem/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <utility>

#include "bem/error.hpp"

namespace bem {

namespace {

// FFTW plans are reusable across threads but the planner itself is not
// thread-safe, so plans are created under a lock and cached by size.
class PlanCache {
  public:
    ~PlanCache() {
        for (auto& [key, plan] : forward_) fftw_destroy_plan(plan);
        for (auto& [key, plan] : inverse_) fftw_destroy_plan(plan);
    }

    fftw_plan forward(int h, int w) { return get(forward_, h, w, true); }
    fftw_plan inverse(int h, int w) { return get(inverse_, h, w, false); }

  private:
    using Key = std::pair<int, int>;

    fftw_plan get(std::map<Key, fftw_plan>& cache, int h, int w, bool fwd) {
        std::lock_guard lock(mutex_);
        auto it = cache.find({h, w});
        if (it != cache.end()) return it->second;
        std::vector<double> real(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
        std::vector<fftw_complex> cplx(static_cast<std::size_t>(h) * static_cast<std::size_t>(w / 2 + 1));
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fftw_plan plan = fwd ? fftw_plan_dft_r2c_2d(h, w, real.data(), cplx.data(), flags)
                             : fftw_plan_dft_c2r_2d(h, w, cplx.data(), real.data(), flags);
        if (!plan) throw DimensionError("FFT planner rejected size " + std::to_string(h) + "x" + std::to_string(w));
        cache.emplace(Key{h, w}, plan);
        return plan;
    }

    std::mutex mutex_;
    std::map<Key, fftw_plan> forward_;
    std::map<Key, fftw_plan> inverse_;
};

PlanCache& plans() {
    static PlanCache cache;
    return cache;
}

}  // namespace

Spectrum rfft2(const Tensor& input) {
    expect_rank(input, 3, "rfft2");
    Spectrum spec;
    spec.channels = input.dim(0);
    spec.height = input.dim(1);
    spec.width = input.dim(2);
    const std::size_t plane = spec.height * spec.width;
    const std::size_t half_plane = spec.height * spec.half_width();
    spec.bins.resize(spec.channels * half_plane);

    fftw_plan plan = plans().forward(static_cast<int>(spec.height), static_cast<int>(spec.width));
    std::vector<double> buffer(plane);
    for (std::size_t c = 0; c < spec.channels; ++c) {
        std::copy_n(input.data().begin() + static_cast<std::ptrdiff_t>(c * plane), plane, buffer.begin());
        auto* out = reinterpret_cast<fftw_complex*>(spec.bins.data() + c * half_plane);
        fftw_execute_dft_r2c(plan, buffer.data(), out);
    }
    return spec;
}

Tensor irfft2(const Spectrum& spectrum, std::size_t height, std::size_t width, DType dtype) {
    if (height == 0 || width == 0) throw DimensionError("irfft2 requires H, W >= 1");
    if (spectrum.height != height || spectrum.width != width ||
        spectrum.bins.size() != spectrum.channels * height * (width / 2 + 1)) {
        throw DimensionError("irfft2: spectrum layout does not match " + std::to_string(height) + "x" +
                             std::to_string(width));
    }
    const std::size_t plane = height * width;
    const std::size_t half_plane = height * (width / 2 + 1);
    Tensor out({spectrum.channels, height, width}, dtype);
    fftw_plan plan = plans().inverse(static_cast<int>(height), static_cast<int>(width));
    // c2r overwrites its input.
    std::vector<std::complex<double>> scratch(half_plane);
    std::vector<double> buffer(plane);
    const double norm = 1.0 / static_cast<double>(plane);
    for (std::size_t c = 0; c < spectrum.channels; ++c) {
        std::copy_n(spectrum.bins.begin() + static_cast<std::ptrdiff_t>(c * half_plane), half_plane,
                    scratch.begin());
        fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(scratch.data()), buffer.data());
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = buffer[i] * norm;
    }
    out.publish("irfft2");
    return out;
}

}  // namespace bem

#include "bem/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "bem/error.hpp"
#include "bem/ops.hpp"

namespace bem {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    expect_same_shape(a, b, "psnr");
    if (a.numel() == 0) throw DimensionError("psnr of empty images");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr std::size_t kWin = 11;
constexpr double kWinSigma = 1.5;

std::array<double, kWin> gaussian_window() {
    std::array<double, kWin> w{};
    double total = 0.0;
    for (std::size_t i = 0; i < kWin; ++i) {
        const double d = static_cast<double>(i) - 5.0;
        w[i] = std::exp(-d * d / (2.0 * kWinSigma * kWinSigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Valid-mode separable Gaussian filter of one h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::array<double, kWin>& g) {
    const std::size_t oh = h - kWin + 1, ow = w - kWin + 1;
    std::vector<double> rows(h * ow);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < kWin; ++k) s += g[k] * plane[y * w + x + k];
            rows[y * ow + x] = s;
        }
    }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < kWin; ++k) s += g[k] * rows[(y + k) * ow + x];
            out[y * ow + x] = s;
        }
    }
    return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
    expect_same_shape(a, b, "ssim");
    expect_rank(a, 3, "ssim");
    const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (h < kWin || w < kWin) {
        throw DimensionError("ssim needs images of at least 11x11, got " + shape_to_string(a.shape()));
    }
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const auto g = gaussian_window();
    const std::size_t plane = h * w;
    double total = 0.0;
    std::size_t count = 0;
    std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
            pa[i] = a[ch * plane + i];
            pb[i] = b[ch * plane + i];
            paa[i] = pa[i] * pa[i];
            pbb[i] = pb[i] * pb[i];
            pab[i] = pa[i] * pb[i];
        }
        const auto ma = filter_valid(pa, h, w, g);
        const auto mb = filter_valid(pb, h, w, g);
        const auto eaa = filter_valid(paa, h, w, g);
        const auto ebb = filter_valid(pbb, h, w, g);
        const auto eab = filter_valid(pab, h, w, g);
        for (std::size_t i = 0; i < ma.size(); ++i) {
            // Written so that a == b gives numerator == denominator bit for bit.
            const double saa = eaa[i] - ma[i] * ma[i];
            const double sbb = ebb[i] - mb[i] * mb[i];
            const double sab = eab[i] - ma[i] * mb[i];
            const double num = (2.0 * (ma[i] * mb[i]) + c1) * (2.0 * sab + c2);
            const double den = (ma[i] * ma[i] + mb[i] * mb[i] + c1) * (saa + sbb + c2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

Tensor luminance(const Tensor& image) {
    expect_rank(image, 3, "luminance");
    if (image.dim(0) == 1) return image;
    if (image.dim(0) != 3) throw DimensionError("luminance expects 1 or 3 channels, got " + shape_to_string(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);
    Tensor out({1, h, w}, image.dtype());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            out.at(0, y, x) = 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
        }
    }
    out.publish("luminance");
    return out;
}

double builtin_iqa(const Tensor& image) {
    const Tensor luma = luminance(image);
    const std::size_t h = luma.dim(1), w = luma.dim(2);
    const double n = static_cast<double>(luma.numel());
    const double m = mean(luma);
    double var = 0.0;
    for (double v : luma.data()) var += (v - m) * (v - m);
    const double contrast = std::sqrt(var / n);

    constexpr std::size_t kBins = 16;
    std::array<double, kBins> hist{};
    double seen = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double gx = x + 1 < w ? luma.at(0, y, x + 1) - luma.at(0, y, x) : 0.0;
            const double gy = y + 1 < h ? luma.at(0, y + 1, x) - luma.at(0, y, x) : 0.0;
            const double mag = std::sqrt(gx * gx + gy * gy);
            const auto bin = std::min<std::size_t>(kBins - 1, static_cast<std::size_t>(mag * kBins));
            hist[bin] += 1.0;
            seen += 1.0;
        }
    }
    double entropy = 0.0;
    for (double c : hist) {
        if (c > 0.0) {
            const double p = c / seen;
            entropy -= p * std::log2(p);
        }
    }
    const double exposure = -(m - 0.5) * (m - 0.5);
    return kIqaExposureWeight * exposure + kIqaContrastWeight * contrast + kIqaEntropyWeight * entropy;
}

namespace {

class StatIqa final : public IqaMetric {
  public:
    std::string name() const override { return "stat"; }
    double score(const Tensor& image) const override { return builtin_iqa(image); }
};

class MeanBrightness final : public IqaMetric {
  public:
    std::string name() const override { return "mean_brightness"; }
    double score(const Tensor& image) const override { return mean(image); }
};

struct Registry {
    std::mutex mutex;
    std::map<std::string, IqaFactory> factories{
        {"stat", [] { return std::make_unique<StatIqa>(); }},
        {"mean_brightness", [] { return std::make_unique<MeanBrightness>(); }},
    };
};

Registry& registry() {
    static Registry r;
    return r;
}

}  // namespace

void register_iqa(const std::string& name, IqaFactory factory) {
    if (name.empty() || !factory) throw ContractError("register_iqa needs a name and a factory");
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    r.factories[name] = std::move(factory);
}

std::unique_ptr<IqaMetric> make_iqa(const std::string& name) {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    const auto it = r.factories.find(name);
    if (it == r.factories.end()) throw MetricError("unknown IQA metric '" + name + "'");
    return it->second();
}

bool has_iqa(const std::string& name) {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    return r.factories.count(name) != 0;
}

std::vector<std::string> iqa_names() {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    std::vector<std::string> names;
    for (const auto& [k, v] : r.factories) names.push_back(k);
    return names;
}

}  // namespace bem

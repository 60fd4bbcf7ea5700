#include "bem/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <numeric>

#include "bem/error.hpp"
#include "bem/fft.hpp"
#include "bem/ops.hpp"

namespace bem {

namespace {

std::int64_t parse_int(const std::string& s, const std::string& whole) {
    std::int64_t v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("invalid rational '" + whole + "'");
    return v;
}

}  // namespace

Rational Rational::parse(const std::string& text) {
    Rational r;
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
        r.num = parse_int(text.substr(0, slash), text);
        r.den = parse_int(text.substr(slash + 1), text);
    } else if (text.find('.') != std::string::npos) {
        // Decimal: scale by a power of ten and reduce.
        const auto dot = text.find('.');
        const std::string digits = text.substr(0, dot) + text.substr(dot + 1);
        const auto frac_len = text.size() - dot - 1;
        if (frac_len > 12) throw ConfigError("rational '" + text + "' has too many decimals");
        r.num = parse_int(digits, text);
        r.den = 1;
        for (std::size_t i = 0; i < frac_len; ++i) r.den *= 10;
    } else {
        r.num = parse_int(text, text);
        r.den = 1;
    }
    if (r.num <= 0 || r.den <= 0) throw ConfigError("rational '" + text + "' must be positive");
    const auto g = std::gcd(r.num, r.den);
    r.num /= g;
    r.den /= g;
    return r;
}

std::string Rational::to_string() const {
    return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

std::size_t Rational::scale(std::size_t n) const {
    const auto scaled = static_cast<std::int64_t>(n) * num;
    if (scaled % den != 0 || scaled / den <= 0) {
        throw ConfigError("size " + std::to_string(n) + " times r=" + to_string() + " is not a positive integer");
    }
    return static_cast<std::size_t>(scaled / den);
}

void PipelineConfig::validate() const {
    if (r.num <= 0 || r.den <= 0 || r.num > r.den) throw ConfigError("r must lie in (0, 1], got " + r.to_string());
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
    const double kf = keep_fraction();
    if (!(kf > 0.0 && kf <= 1.0)) throw ConfigError("lp_keep_fraction must lie in (0, 1]");
}

Tensor lowpass(const Tensor& x, double keep_fraction) {
    expect_rank(x, 3, "lowpass");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
        throw DomainError("lowpass keep_fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
    }
    if (keep_fraction == 1.0) return x;
    const std::size_t h = x.dim(1), w = x.dim(2);
    Spectrum spec = rfft2(x);
    const double cutoff = keep_fraction / 2.0 + 1e-12;
    for (std::size_t u = 0; u < h; ++u) {
        const double fu = static_cast<double>(std::min(u, h - u)) / static_cast<double>(h);
        for (std::size_t v = 0; v < spec.half_width(); ++v) {
            const double fv = static_cast<double>(v) / static_cast<double>(w);
            if (fu <= cutoff && fv <= cutoff) continue;
            for (std::size_t c = 0; c < spec.channels; ++c) spec.at(c, u, v) = 0.0;
        }
    }
    return irfft2(spec, h, w, x.dtype());
}

Tensor coarse_input(const Tensor& x, const PipelineConfig& cfg) {
    expect_rank(x, 3, "coarse_input");
    cfg.validate();
    const auto [ch, cw] = cfg.coarse_size(x.dim(1), x.dim(2));
    return bilinear_resize(lowpass(x, cfg.keep_fraction()), ch, cw);
}

Tensor compose_illumination(const Tensor& x, const Tensor& z, double alpha) {
    expect_same_shape(x, z, "compose_illumination");
    if (!(alpha >= 0.0)) throw DomainError("compose_illumination requires alpha >= 0");
    Tensor out(x.shape(), narrowest(x.dtype(), z.dtype()));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x[i] + alpha * z[i]) * z[i];
    out.publish("compose_illumination");
    return out;
}

Tensor invert_illumination(const Tensor& x, const Tensor& y, double alpha) {
    expect_same_shape(x, y, "invert_illumination");
    if (!(alpha > 0.0)) throw DomainError("invert_illumination requires alpha > 0, got " + std::to_string(alpha));
    Tensor z(x.shape(), narrowest(x.dtype(), y.dtype()));
    for (std::size_t i = 0; i < z.numel(); ++i) {
        const double xi = x[i], yi = y[i];
        if (yi < 0.0) throw DomainError("invert_illumination requires y >= 0, got " + std::to_string(yi));
        const double s = std::sqrt(xi * xi + 4.0 * alpha * yi);
        if (xi >= 0.0) {
            z[i] = (s + xi) > 0.0 ? 2.0 * yi / (s + xi) : 0.0;
        } else {
            z[i] = (s - xi) / (2.0 * alpha);
        }
    }
    z.publish("invert_illumination");
    return z;
}

Tensor illumination_target(const Tensor& x, const Tensor& y, const PipelineConfig& cfg) {
    cfg.validate();
    return lowpass(invert_illumination(x, y, cfg.alpha), cfg.keep_fraction());
}

Tensor coarse_illumination_target(const Tensor& x, const Tensor& y, const PipelineConfig& cfg) {
    const auto [ch, cw] = cfg.coarse_size(x.dim(1), x.dim(2));
    return bilinear_resize(illumination_target(x, y, cfg), ch, cw);
}

Tensor stage1_sample(const Tensor& x, const Model& stage1, const PipelineConfig& cfg, EpsilonSource& eps) {
    return stage1.forward(coarse_input(x, cfg), &eps);
}

Tensor stage2_forward(const Tensor& x, const Tensor& z_up, const Model& stage2) {
    expect_same_shape(x, z_up, "stage2_forward");
    if (stage2.spec().in_channels != 2 * x.dim(0)) {
        throw DimensionError("stage-II model expects " + std::to_string(stage2.spec().in_channels) +
                             " input channels, [x, z] has " + std::to_string(2 * x.dim(0)));
    }
    return stage2.forward(concat_channels(x, z_up));
}

}  // namespace bem

#include "bem/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bem/error.hpp"
#include "bem/ops.hpp"
#include "bem/ppm.hpp"

namespace bem {

namespace {

constexpr std::size_t kChannels = 3;

std::string scene_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%05zu", i);
    return buf;
}

void paint(Tensor& img, std::size_t y, std::size_t x, const double* colour, double opacity) {
    for (std::size_t c = 0; c < kChannels; ++c) {
        double& v = img.at(c, y, x);
        v = (1.0 - opacity) * v + opacity * colour[c];
    }
}

Tensor make_scene(Rng& rng, std::size_t size) {
    Tensor img({kChannels, size, size});
    const double n = static_cast<double>(size);

    // Smooth background gradient.
    double base[kChannels], gx[kChannels], gy[kChannels];
    for (std::size_t c = 0; c < kChannels; ++c) {
        base[c] = rng.uniform(0.2, 0.8);
        gx[c] = rng.uniform(-0.5, 0.5);
        gy[c] = rng.uniform(-0.5, 0.5);
    }
    for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                img.at(c, y, x) = base[c] + gx[c] * (static_cast<double>(x) / n - 0.5) +
                                  gy[c] * (static_cast<double>(y) / n - 0.5);
            }
        }
    }

    // Rectangles and disks.
    const std::size_t shapes = 3 + rng.below(4);
    for (std::size_t s = 0; s < shapes; ++s) {
        double colour[kChannels];
        for (auto& v : colour) v = rng.uniform();
        const double opacity = rng.uniform(0.6, 1.0);
        const double cx = rng.uniform(0.0, n), cy = rng.uniform(0.0, n);
        const double extent = rng.uniform(0.1, 0.35) * n;
        const bool disk = rng.below(2) == 1;
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                const bool inside = disk ? (dx * dx + dy * dy <= extent * extent)
                                         : (std::abs(dx) <= extent && std::abs(dy) <= 0.6 * extent);
                if (inside) paint(img, y, x, colour, opacity);
            }
        }
    }

    // Texture.
    for (auto& v : img.data()) v += 0.03 * rng.normal();

    // Stretch to the full range.
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    const double mn = *lo, span = std::max(*hi - *lo, 1e-12);
    for (auto& v : img.data()) v = std::clamp((v - mn) / span, 0.0, 1.0);
    img.publish("gen_clean");
    return img;
}

}  // namespace

void Sample::validate() const {
    if (targets.empty()) throw ContractError("sample " + scene_id + " has no targets");
    for (const auto& t : targets) expect_same_shape(x, t, "sample " + scene_id);
}

void DegradeParams::validate(std::size_t channels) const {
    if (!(gamma > 0.0)) throw DomainError("degrade: gamma must be > 0");
    if (!(gain > 0.0 && gain <= 1.0)) throw DomainError("degrade: gain must lie in (0, 1]");
    if (!(noise_sigma >= 0.0)) throw DomainError("degrade: noise_sigma must be >= 0");
    if (color_cast.size() != channels) {
        throw DimensionError("degrade: color_cast has " + std::to_string(color_cast.size()) +
                             " entries for an image with " + std::to_string(channels) + " channels");
    }
    for (double c : color_cast) {
        if (!(c > 0.0)) throw DomainError("degrade: color_cast entries must be > 0");
    }
}

void OneToManyOptions::validate() const {
    if (size < 16) throw DomainError("synthetic scenes need size >= 16");
    if (n_targets < 1) throw DomainError("n_targets must be >= 1");
    if (!(exposure_spread >= 0.0 && exposure_spread < 1.0)) throw DomainError("exposure_spread must lie in [0, 1)");
    if (!(noisy_target_fraction >= 0.0 && noisy_target_fraction <= 1.0)) {
        throw DomainError("noisy_target_fraction must lie in [0, 1]");
    }
}

std::vector<Tensor> gen_clean(std::uint64_t seed, std::size_t count, std::size_t size) {
    if (size < 16) throw DomainError("gen_clean: size must be >= 16, got " + std::to_string(size));
    std::vector<Tensor> scenes;
    scenes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(seed, "clean:" + std::to_string(i));
        scenes.push_back(make_scene(rng, size));
    }
    return scenes;
}

Tensor degrade(const Tensor& y, const DegradeParams& params, EpsilonSource& eps) {
    expect_rank(y, 3, "degrade");
    params.validate(y.dim(0));
    Tensor x(y.shape(), y.dtype());
    const std::size_t plane = y.dim(1) * y.dim(2);
    for (std::size_t c = 0; c < y.dim(0); ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t k = c * plane + i;
            double v = params.color_cast[c] * params.gain * std::pow(std::max(y[k], 0.0), params.gamma);
            if (params.noise_sigma > 0.0) v += params.noise_sigma * eps.next();
            x[k] = std::clamp(v, 0.0, 1.0);
        }
    }
    x.publish("degrade");
    return x;
}

std::vector<Sample> gen_one_to_many(std::uint64_t seed, const OneToManyOptions& options) {
    options.validate();
    const auto clean = gen_clean(seed, options.count, options.size);
    std::vector<Sample> samples;
    samples.reserve(options.count);
    Rng label_rng(seed, "noisy-targets");
    for (std::size_t i = 0; i < clean.size(); ++i) {
        Rng rng(seed, "degrade-params:" + std::to_string(i));
        DegradeParams p;
        p.gamma = rng.uniform(1.5, 2.5);
        p.gain = rng.uniform(0.3, 0.6);
        p.noise_sigma = 0.01;
        for (auto& c : p.color_cast) c = rng.uniform(0.9, 1.1);
        EpsilonSource eps(seed, "degrade:" + std::to_string(i));

        Sample s;
        s.scene_id = scene_name(i);
        s.x = degrade(clean[i], p, eps);
        const std::size_t n = options.n_targets;
        const double spread = options.exposure_spread;
        for (std::size_t j = 0; j < n; ++j) {
            const double gain =
                n == 1 ? 1.0 : (1.0 - spread + 2.0 * spread * static_cast<double>(j) / static_cast<double>(n - 1)) /
                                   (1.0 + spread);
            Tensor t(clean[i].shape());
            for (std::size_t k = 0; k < t.numel(); ++k) t[k] = std::clamp(gain * clean[i][k], 0.0, 1.0);
            if (options.noisy_target_fraction > 0.0 && label_rng.uniform() < options.noisy_target_fraction) {
                EpsilonSource noise(seed, "target-noise:" + std::to_string(i) + ":" + std::to_string(j));
                for (auto& v : t.data()) v = std::clamp(v + options.noisy_target_sigma * noise.next(), 0.0, 1.0);
            }
            t.publish("gen_one_to_many");
            s.targets.push_back(std::move(t));
            s.variant_ids.push_back("t" + std::to_string(j));
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::vector<ManifestEntry> entries;
    entries.reserve(samples.size());
    for (const auto& s : samples) {
        s.validate();
        ManifestEntry e;
        e.scene_id = s.scene_id;
        e.x_path = s.scene_id + "_x.ppm";
        write_ppm(dir / e.x_path, s.x);
        for (std::size_t j = 0; j < s.targets.size(); ++j) {
            const std::string variant = j < s.variant_ids.size() ? s.variant_ids[j] : "t" + std::to_string(j);
            e.target_paths.push_back(s.scene_id + "_" + variant + ".ppm");
            write_ppm(dir / e.target_paths.back(), s.targets[j]);
        }
        entries.push_back(std::move(e));
    }
    const auto manifest = dir / "manifest.jsonl";
    write_manifest(manifest, entries);
    return manifest;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
    const auto entries = read_manifest(manifest);
    const auto root = manifest.parent_path();
    Dataset ds;
    for (const auto& e : entries) {
        Sample s;
        s.scene_id = e.scene_id;
        s.x = read_ppm(root / e.x_path);
        for (const auto& t : e.target_paths) {
            s.targets.push_back(read_ppm(root / t));
            s.variant_ids.push_back(std::filesystem::path(t).stem().string());
        }
        s.validate();
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace bem

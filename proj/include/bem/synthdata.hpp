#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bem/random.hpp"
#include "bem/tensor.hpp"

namespace bem {

// One degraded input with one or more plausible references of equal shape.
struct Sample {
    Tensor x;
    std::vector<Tensor> targets;
    std::string scene_id;
    std::vector<std::string> variant_ids;

    void validate() const;
};

struct Dataset {
    std::vector<Sample> samples;

    bool empty() const noexcept { return samples.empty(); }
    std::size_t size() const noexcept { return samples.size(); }
};

// x = clamp(color_cast * gain * y^gamma + N(0, noise_sigma^2), 0, 1)
struct DegradeParams {
    double gamma = 2.0;
    double gain = 0.5;
    double noise_sigma = 0.0;
    std::vector<double> color_cast{1.0, 1.0, 1.0};

    void validate(std::size_t channels) const;
};

struct OneToManyOptions {
    std::size_t count = 64;
    std::size_t size = 32;
    std::size_t n_targets = 2;
    double exposure_spread = 0.3;
    // Share of targets that receive extra Gaussian noise (imperfect labels).
    double noisy_target_fraction = 0.0;
    double noisy_target_sigma = 0.05;

    void validate() const;
};

// Procedural 3-channel scenes: a smooth colour gradient, random rectangles and
// disks, and fine texture noise, stretched to span exactly [0, 1].
std::vector<Tensor> gen_clean(std::uint64_t seed, std::size_t count, std::size_t size);

Tensor degrade(const Tensor& y, const DegradeParams& params, EpsilonSource& eps);

// Per scene: one degraded input and n_targets references whose global gains
// are evenly spaced over [1 - s, 1 + s] (divided by 1 + s so nothing clips).
// A single target is the clean scene itself.
std::vector<Sample> gen_one_to_many(std::uint64_t seed, const OneToManyOptions& options);

// Writes scene_NNNNN_x.ppm, scene_NNNNN_tK.ppm and manifest.jsonl into `dir`
// (created if missing). Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);

// One manifest line: {"scene_id", "x_path", "target_paths"}; paths relative to
// the manifest's directory.
struct ManifestEntry {
    std::string scene_id;
    std::string x_path;
    std::vector<std::string> target_paths;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

Dataset load_dataset(const std::filesystem::path& manifest);

}  // namespace bem

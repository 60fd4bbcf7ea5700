#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bem/backbone.hpp"
#include "bem/inference.hpp"
#include "bem/pipeline.hpp"
#include "bem/synthdata.hpp"
#include "bem/train.hpp"

namespace bem {

// Everything a command needs, read from a flat key=value file. Lines are
// "key = value"; "#" starts a comment; blank lines are ignored.
struct AppConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    std::filesystem::path manifest;  // dataset manifest; defaults to <out_dir>/data/manifest.jsonl

    OneToManyOptions synth;
    std::size_t channels = 3;
    BackboneSpec stage1{3, 3, 8, 1, 1, Activation::SiLU};
    bool stage1_bayesian = true;
    BackboneSpec stage2{6, 3, 8, 2, 1, Activation::SiLU};
    PipelineConfig pipeline;
    TrainConfig train;
    InferenceConfig infer{25, InferenceMode::MonteCarlo, "stat", 0, 1};
    std::filesystem::path checkpoint_stage1;  // defaults to <out_dir>/stage1.bemc
    std::filesystem::path checkpoint_stage2;  // defaults to <out_dir>/stage2.bemc

    std::filesystem::path manifest_path() const;
    std::filesystem::path stage1_path() const;
    std::filesystem::path stage2_path() const;

    // Cross-field checks; throws ConfigError.
    void validate() const;
};

// Every accepted key, in documentation order.
const std::vector<std::string>& config_keys();

// Throws ConfigError naming the line and key on unknown or duplicate keys and
// malformed values. Validates the result.
AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::filesystem::path& path);

}  // namespace bem

#include "bem/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "bem/error.hpp"

namespace bem {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

double to_double(const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(out)) throw ConfigError("expected a finite number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected true or false, got '" + v + "'");
}

using Setter = std::function<void(AppConfig&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
    static const std::vector<std::pair<std::string, Setter>> table = {
        {"seed", [](AppConfig& c, const std::string& v) { c.seed = to_u64(v); }},
        {"out_dir", [](AppConfig& c, const std::string& v) { c.out_dir = v; }},
        {"manifest", [](AppConfig& c, const std::string& v) { c.manifest = v; }},
        {"channels", [](AppConfig& c, const std::string& v) { c.channels = to_size(v); }},

        {"synth.count", [](AppConfig& c, const std::string& v) { c.synth.count = to_size(v); }},
        {"synth.size", [](AppConfig& c, const std::string& v) { c.synth.size = to_size(v); }},
        {"synth.n_targets", [](AppConfig& c, const std::string& v) { c.synth.n_targets = to_size(v); }},
        {"synth.exposure_spread", [](AppConfig& c, const std::string& v) { c.synth.exposure_spread = to_double(v); }},
        {"synth.noisy_target_fraction",
         [](AppConfig& c, const std::string& v) { c.synth.noisy_target_fraction = to_double(v); }},
        {"synth.noisy_target_sigma",
         [](AppConfig& c, const std::string& v) { c.synth.noisy_target_sigma = to_double(v); }},

        {"stage1.base_channels", [](AppConfig& c, const std::string& v) { c.stage1.base_channels = to_size(v); }},
        {"stage1.levels", [](AppConfig& c, const std::string& v) { c.stage1.levels = to_size(v); }},
        {"stage1.blocks_per_level", [](AppConfig& c, const std::string& v) { c.stage1.blocks_per_level = to_size(v); }},
        {"stage1.bayesian", [](AppConfig& c, const std::string& v) { c.stage1_bayesian = to_bool(v); }},
        {"stage2.base_channels", [](AppConfig& c, const std::string& v) { c.stage2.base_channels = to_size(v); }},
        {"stage2.levels", [](AppConfig& c, const std::string& v) { c.stage2.levels = to_size(v); }},
        {"stage2.blocks_per_level", [](AppConfig& c, const std::string& v) { c.stage2.blocks_per_level = to_size(v); }},

        {"pipeline.r", [](AppConfig& c, const std::string& v) { c.pipeline.r = Rational::parse(v); }},
        {"pipeline.alpha", [](AppConfig& c, const std::string& v) { c.pipeline.alpha = to_double(v); }},
        {"pipeline.lp_keep_fraction",
         [](AppConfig& c, const std::string& v) { c.pipeline.lp_keep_fraction = to_double(v); }},

        {"train.batch_size", [](AppConfig& c, const std::string& v) { c.train.batch_size = to_size(v); }},
        {"train.iters_stage1", [](AppConfig& c, const std::string& v) { c.train.iters_stage1 = to_size(v); }},
        {"train.iters_stage2", [](AppConfig& c, const std::string& v) { c.train.iters_stage2 = to_size(v); }},
        {"train.lr_init", [](AppConfig& c, const std::string& v) { c.train.lr_init = to_double(v); }},
        {"train.lr_final", [](AppConfig& c, const std::string& v) { c.train.lr_final = to_double(v); }},
        {"train.kl_weight", [](AppConfig& c, const std::string& v) { c.train.kl_weight = to_double(v); }},
        {"train.n_mc", [](AppConfig& c, const std::string& v) { c.train.n_mc = static_cast<int>(to_size(v)); }},
        {"train.crop_size", [](AppConfig& c, const std::string& v) { c.train.crop_size = to_size(v); }},
        {"train.ema_beta", [](AppConfig& c, const std::string& v) { c.train.ema_beta = to_double(v); }},
        {"train.data_loss",
         [](AppConfig& c, const std::string& v) {
             if (v == "l2") {
                 c.train.data_loss = DataLoss::L2;
             } else if (v == "l1") {
                 c.train.data_loss = DataLoss::L1;
             } else {
                 throw ConfigError("expected l2 or l1, got '" + v + "'");
             }
         }},
        {"train.grad_clip", [](AppConfig& c, const std::string& v) { c.train.grad_clip = to_double(v); }},
        {"train.precision",
         [](AppConfig& c, const std::string& v) {
             if (v == "f32") {
                 c.train.precision = DType::F32;
             } else if (v == "f64") {
                 c.train.precision = DType::F64;
             } else {
                 throw ConfigError("expected f32 or f64, got '" + v + "'");
             }
         }},
        {"train.prior",
         [](AppConfig& c, const std::string& v) {
             if (v == "adaptive") {
                 c.train.prior = PriorKind::Adaptive;
             } else if (v == "standard_normal") {
                 c.train.prior = PriorKind::StandardNormal;
             } else {
                 throw ConfigError("expected adaptive or standard_normal, got '" + v + "'");
             }
         }},

        {"infer.k", [](AppConfig& c, const std::string& v) { c.infer.k = to_size(v); }},
        {"infer.mode", [](AppConfig& c, const std::string& v) { c.infer.mode = parse_mode(v); }},
        {"infer.iqa", [](AppConfig& c, const std::string& v) { c.infer.iqa_id = v; }},
        {"infer.threads", [](AppConfig& c, const std::string& v) { c.infer.threads = to_size(v); }},

        {"checkpoint.stage1", [](AppConfig& c, const std::string& v) { c.checkpoint_stage1 = v; }},
        {"checkpoint.stage2", [](AppConfig& c, const std::string& v) { c.checkpoint_stage2 = v; }},
    };
    return table;
}

}  // namespace

std::filesystem::path AppConfig::manifest_path() const {
    return manifest.empty() ? out_dir / "data" / "manifest.jsonl" : manifest;
}
std::filesystem::path AppConfig::stage1_path() const {
    return checkpoint_stage1.empty() ? out_dir / "stage1.bemc" : checkpoint_stage1;
}
std::filesystem::path AppConfig::stage2_path() const {
    return checkpoint_stage2.empty() ? out_dir / "stage2.bemc" : checkpoint_stage2;
}

void AppConfig::validate() const {
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (stage1.in_channels != channels || stage1.out_channels != channels) {
        throw ConfigError("stage-I model must map " + std::to_string(channels) + " channels to " +
                          std::to_string(channels));
    }
    if (stage2.in_channels != 2 * channels || stage2.out_channels != channels) {
        throw ConfigError("stage-II model must map " + std::to_string(2 * channels) + " channels to " +
                          std::to_string(channels));
    }
    try {
        stage1.validate();
        stage2.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    synth.validate();
    pipeline.validate();
    train.validate();
    if (infer.mode == InferenceMode::Rank && !has_iqa(infer.iqa_id)) {
        throw ConfigError("infer.iqa '" + infer.iqa_id + "' is not a registered metric");
    }
    infer.validate();
    const std::size_t coarse_crop = pipeline.r.scale(train.crop_size);
    if (coarse_crop % stage1.divisor() != 0) {
        throw ConfigError("coarse crop " + std::to_string(coarse_crop) + " is not divisible by 2^stage1.levels");
    }
    if (train.crop_size % stage2.divisor() != 0) {
        throw ConfigError("train.crop_size is not divisible by 2^stage2.levels");
    }
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, fn] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

AppConfig parse_config(const std::string& text) {
    std::map<std::string, const Setter*> lookup;
    for (const auto& [name, fn] : setters()) lookup[name] = &fn;

    AppConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(line_no);
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = lookup.find(key);
        if (it == lookup.end()) throw ConfigError(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
        try {
            (*it->second)(cfg, value);
        } catch (const Error& e) {
            throw ConfigError(where + ": key '" + key + "': " + e.what());
        }
    }
    cfg.stage1.in_channels = cfg.stage1.out_channels = cfg.channels;
    cfg.stage2.in_channels = 2 * cfg.channels;
    cfg.stage2.out_channels = cfg.channels;
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

}  // namespace bem

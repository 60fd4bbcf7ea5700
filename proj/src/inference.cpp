#include "bem/inference.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "bem/error.hpp"
#include "bem/ops.hpp"

namespace bem {

std::string to_string(InferenceMode mode) { return mode == InferenceMode::Rank ? "rank" : "mc"; }

InferenceMode parse_mode(const std::string& text) {
    if (text == "mc" || text == "montecarlo") return InferenceMode::MonteCarlo;
    if (text == "rank") return InferenceMode::Rank;
    throw ConfigError("unknown inference mode '" + text + "' (expected mc or rank)");
}

void InferenceConfig::validate() const {
    if (k < 1) throw ConfigError("infer.k must be >= 1");
    if (threads < 1) throw ConfigError("infer.threads must be >= 1");
    if (mode == InferenceMode::Rank && iqa_id.empty()) throw ConfigError("rank mode needs an IQA metric id");
}

std::string candidate_stream(std::size_t k) { return "infer:" + std::to_string(k); }

CandidateSet sample_candidates(const Tensor& x, const Model& stage1, const PipelineConfig& pcfg,
                               const InferenceConfig& icfg) {
    icfg.validate();
    const Tensor coarse = coarse_input(x, pcfg);
    CandidateSet out;
    out.z.resize(icfg.k);
    for (std::size_t k = 0; k < icfg.k; ++k) out.streams.push_back(stream_id(candidate_stream(k)));

    auto run = [&](std::size_t k) {
        EpsilonSource eps(icfg.seed, out.streams[k]);
        out.z[k] = stage1.forward(coarse, &eps);
    };
    const std::size_t workers = std::min(icfg.threads, icfg.k);
    if (workers <= 1) {
        for (std::size_t k = 0; k < icfg.k; ++k) run(k);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < icfg.k; k = next++) {
                try {
                    run(k);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

Tensor mc_aggregate(const CandidateSet& candidates) {
    if (candidates.z.empty()) throw ContractError("mc_aggregate of an empty candidate set");
    const Tensor& first = candidates.z.front();
    Tensor out(first.shape(), first.dtype());
    for (const auto& z : candidates.z) {
        expect_same_shape(first, z, "mc_aggregate");
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += z[i];
    }
    const double k = static_cast<double>(candidates.z.size());
    for (auto& v : out.data()) v /= k;
    out.publish("mc_aggregate");
    return out;
}

std::size_t select_index(std::span<const double> scores) {
    if (scores.empty()) throw ContractError("select_index of an empty score list");
    std::size_t best = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (!std::isfinite(scores[k])) {
            throw MetricError("candidate " + std::to_string(k) + " has a non-finite score");
        }
        if (scores[k] > scores[best]) best = k;
    }
    return best;
}

std::size_t rank_select(const Tensor& x, CandidateSet& candidates, const PipelineConfig& pcfg,
                        const IqaMetric& metric) {
    if (candidates.z.empty()) throw ContractError("rank_select of an empty candidate set");
    const Tensor coarse = coarse_input(x, pcfg);
    candidates.scores.clear();
    for (const auto& z : candidates.z) {
        candidates.scores.push_back(metric.score(compose_illumination(coarse, z, pcfg.alpha)));
    }
    return select_index(candidates.scores);
}

EnhanceResult enhance(const Tensor& x, const Model& stage1, const Model& stage2, const PipelineConfig& pcfg,
                      const InferenceConfig& icfg) {
    icfg.validate();
    EnhanceResult res;
    res.candidates = sample_candidates(x, stage1, pcfg, icfg);
    if (icfg.mode == InferenceMode::Rank) {
        const auto metric = make_iqa(icfg.iqa_id);
        res.selected = rank_select(x, res.candidates, pcfg, *metric);
        res.z_star = res.candidates.z[*res.selected];
    } else {
        res.z_star = mc_aggregate(res.candidates);
    }
    const Tensor z_up = bilinear_resize(res.z_star, x.dim(1), x.dim(2));
    res.y = stage2_forward(x, z_up, stage2);
    return res;
}

}  // namespace bem

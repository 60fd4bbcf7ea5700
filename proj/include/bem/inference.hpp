#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bem/backbone.hpp"
#include "bem/metrics.hpp"
#include "bem/pipeline.hpp"

namespace bem {

enum class InferenceMode { MonteCarlo, Rank };

std::string to_string(InferenceMode mode);
// "mc" or "rank".
InferenceMode parse_mode(const std::string& text);

struct InferenceConfig {
    std::size_t k = 25;
    InferenceMode mode = InferenceMode::MonteCarlo;
    std::string iqa_id;  // required for Rank
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
};

// Stream label of candidate k: "infer:k".
std::string candidate_stream(std::size_t k);

struct CandidateSet {
    std::vector<Tensor> z;  // coarse illumination maps, one per candidate
    std::vector<double> scores;  // empty until ranked
    std::vector<std::uint64_t> streams;

    std::size_t size() const noexcept { return z.size(); }
};

// K posterior passes of the Stage-I model over coarse_input(x). Candidate k
// draws its noise from stream candidate_stream(k), so the set does not depend
// on the thread count.
CandidateSet sample_candidates(const Tensor& x, const Model& stage1, const PipelineConfig& pcfg,
                               const InferenceConfig& icfg);

// Elementwise mean of the candidates.
Tensor mc_aggregate(const CandidateSet& candidates);

// Index of the largest score; the first one wins ties. Throws MetricError on a
// non-finite score.
std::size_t select_index(std::span<const double> scores);

// Scores compose_illumination(coarse_input(x), z_k, alpha) for every
// candidate, stores them in `candidates.scores` and returns the argmax index.
std::size_t rank_select(const Tensor& x, CandidateSet& candidates, const PipelineConfig& pcfg,
                        const IqaMetric& metric);

struct EnhanceResult {
    Tensor y;       // enhanced image at full resolution
    Tensor z_star;  // aggregated or selected coarse illumination
    CandidateSet candidates;
    std::optional<std::size_t> selected;  // Rank mode only
};

// Sample K candidates, reduce them, upsample once and run Stage II once.
EnhanceResult enhance(const Tensor& x, const Model& stage1, const Model& stage2, const PipelineConfig& pcfg,
                      const InferenceConfig& icfg);

}  // namespace bem

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bem/backbone.hpp"
#include "bem/pipeline.hpp"
#include "bem/random.hpp"
#include "bem/synthdata.hpp"
#include "bem/variational.hpp"

namespace bem {

enum class PriorKind { Adaptive, StandardNormal };

struct TrainConfig {
    std::size_t batch_size = 8;
    std::size_t iters_stage1 = 2000;
    std::size_t iters_stage2 = 1000;
    double lr_init = 2e-4;
    double lr_final = 1e-6;
    // Unset: batch_size / dataset size, i.e. one KL per epoch.
    std::optional<double> kl_weight;
    int n_mc = 1;
    std::uint64_t seed = 0;
    std::size_t crop_size = 32;
    double ema_beta = kDefaultEmaBeta;
    DataLoss data_loss = DataLoss::L2;
    double grad_clip = 1.0;
    DType precision = DType::F32;
    PriorKind prior = PriorKind::Adaptive;

    void validate() const;
    double effective_kl_weight(std::size_t dataset_size) const;
};

// Cosine annealing from lr_init at step 0 to lr_final at step `total`.
double cosine_lr(std::size_t step, std::size_t total, double lr_init, double lr_final);

// Scales `grads` in place so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

// Adam with bias correction; one moment pair per parameter tensor.
class Adam {
  public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    // Updates params in place and re-publishes them at their own precision.
    void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);
    std::size_t steps() const noexcept { return t_; }

  private:
    double beta1_, beta2_, epsilon_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Minibatch source over a one-to-many dataset. Samples are visited in
// reshuffled epochs; every visit picks one of the sample's targets uniformly
// and a random crop_size x crop_size window shared by x and the target.
class PairSampler {
  public:
    PairSampler(const Dataset& dataset, std::size_t crop_size, std::uint64_t seed);

    std::vector<Example> next_batch(std::size_t batch_size);
    Example next();

    // visits()[sample][target]
    const std::vector<std::vector<std::size_t>>& visits() const noexcept { return visits_; }

  private:
    void reshuffle();

    const Dataset& dataset_;
    std::size_t crop_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::vector<std::vector<std::size_t>> visits_;
};

struct StepRecord {
    std::size_t step = 0;
    double data_term = 0.0;
    double kl_term = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    // Stage II: every (x, y, z) triple fed to G, z being the conditioning
    // illumination.
    std::function<void(const Tensor& x, const Tensor& y, const Tensor& z)> on_stage2_example;
};

struct TrainTrace {
    std::vector<StepRecord> steps;
};

// Stage I. A Bayesian F minimizes the ELBO minibatch loss against `prior`,
// followed by an EMA prior update after every optimizer step; a deterministic F
// minimizes the data term alone (baseline). Inputs are coarse_input(x) and
// targets coarse_illumination_target(x, y). Throws DivergenceError on a
// non-finite loss.
TrainTrace train_stage1(const Dataset& dataset, Model& stage1, AdaptivePrior& prior, const TrainConfig& cfg,
                        const PipelineConfig& pcfg, const TrainHooks& hooks = {});

// Stage II: G([x, illumination_target(x, y)]) regresses y under L1. The
// Stage-I model is not involved.
TrainTrace train_stage2(const Dataset& dataset, Model& stage2, const TrainConfig& cfg, const PipelineConfig& pcfg,
                        const TrainHooks& hooks = {});

// Crop helper shared by the sampler and tests.
Tensor crop(const Tensor& img, std::size_t top, std::size_t left, std::size_t size);

}  // namespace bem

#include "bem/train.hpp"

#include <cmath>
#include <numbers>

#include "bem/autodiff.hpp"
#include "bem/error.hpp"
#include "bem/ops.hpp"

namespace bem {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr_init > 0.0) || !(lr_final > 0.0)) throw ConfigError("learning rates must be positive");
    if (lr_final > lr_init) throw ConfigError("lr_final must not exceed lr_init");
    if (kl_weight && !(*kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
    if (n_mc < 1) throw ConfigError("n_mc must be >= 1");
    if (crop_size == 0) throw ConfigError("crop_size must be positive");
    if (!(ema_beta >= 0.0 && ema_beta <= 1.0)) throw ConfigError("ema_beta must lie in [0, 1]");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
}

double TrainConfig::effective_kl_weight(std::size_t dataset_size) const {
    if (kl_weight) return *kl_weight;
    if (dataset_size == 0) return 1.0;
    return std::min(1.0, static_cast<double>(batch_size) / static_cast<double>(dataset_size));
}

double cosine_lr(std::size_t step, std::size_t total, double lr_init, double lr_final) {
    if (total == 0) return lr_init;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) {
        for (double v : g.data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& g : grads) {
            for (auto& v : g.data()) v *= f;
        }
    }
    return norm;
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
    if (params.size() != grads.size()) throw DimensionError("Adam: parameter/gradient count mismatch");
    if (m_.empty()) {
        for (const auto* p : params) {
            m_.push_back(Tensor::zeros(p->shape()));
            v_.push_back(Tensor::zeros(p->shape()));
        }
    }
    if (m_.size() != params.size()) throw DimensionError("Adam: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        expect_same_shape(p, g, "Adam");
        for (std::size_t i = 0; i < p.numel(); ++i) {
            m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
            v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
            p[i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + epsilon_);
        }
        p.publish("Adam");
    }
}

Tensor crop(const Tensor& img, std::size_t top, std::size_t left, std::size_t size) {
    expect_rank(img, 3, "crop");
    if (top + size > img.dim(1) || left + size > img.dim(2)) {
        throw DimensionError("crop window exceeds image " + shape_to_string(img.shape()));
    }
    if (top == 0 && left == 0 && size == img.dim(1) && size == img.dim(2)) return img;
    Tensor out({img.dim(0), size, size}, img.dtype());
    for (std::size_t c = 0; c < img.dim(0); ++c) {
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
        }
    }
    return out;
}

PairSampler::PairSampler(const Dataset& dataset, std::size_t crop_size, std::uint64_t seed)
    : dataset_(dataset), crop_(crop_size), rng_(seed, "data") {
    if (dataset.empty()) throw ContractError("cannot sample from an empty dataset");
    for (const auto& s : dataset.samples) {
        s.validate();
        if (s.x.dim(1) < crop_ || s.x.dim(2) < crop_) {
            throw ConfigError("crop_size " + std::to_string(crop_) + " exceeds image " +
                              shape_to_string(s.x.shape()) + " of " + s.scene_id);
        }
        visits_.emplace_back(s.targets.size(), 0);
    }
    order_.resize(dataset.size());
    reshuffle();
}

void PairSampler::reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    cursor_ = 0;
}

Example PairSampler::next() {
    if (cursor_ == order_.size()) reshuffle();
    const std::size_t idx = order_[cursor_++];
    const Sample& s = dataset_.samples[idx];
    const std::size_t t = rng_.below(s.targets.size());
    ++visits_[idx][t];
    const std::size_t top = rng_.below(s.x.dim(1) - crop_ + 1);
    const std::size_t left = rng_.below(s.x.dim(2) - crop_ + 1);
    return Example{crop(s.x, top, left, crop_), crop(s.targets[t], top, left, crop_)};
}

std::vector<Example> PairSampler::next_batch(std::size_t batch_size) {
    std::vector<Example> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(next());
    return batch;
}

namespace {

std::vector<Tensor*> trainable(Model& model) {
    std::vector<Tensor*> params;
    if (model.bayesian()) {
        auto& post = model.posterior();
        for (std::size_t i = 0; i < post.size(); ++i) {
            params.push_back(&post.layer(i).mu);
            params.push_back(&post.layer(i).rho);
        }
    } else {
        for (auto& w : model.weights()) params.push_back(&w);
    }
    return params;
}

std::vector<Var> leaves(const Model& model, const BoundParams& bound) {
    if (!model.bayesian()) return bound.weights;
    std::vector<Var> out;
    for (std::size_t i = 0; i < bound.weights.size(); ++i) {
        out.push_back(bound.weights[i]);
        out.push_back(bound.rho[i]);
    }
    return out;
}

// Backward, clip, Adam step. Returns nothing; failures surface as exceptions.
void optimize(Tape& tape, Var loss, Model& model, const BoundParams& bound, Adam& adam, double lr, double clip) {
    const Gradients grads = tape.backward(loss);
    std::vector<Tensor> g;
    for (Var leaf : leaves(model, bound)) g.push_back(grads.of(leaf));
    clip_grad_norm(g, clip);
    adam.step(trainable(model), g, lr);
}

void cast_model(Model& model, DType dtype) {
    for (Tensor* p : trainable(model)) {
        if (p->dtype() != dtype) *p = p->to(dtype);
    }
}

}  // namespace

TrainTrace train_stage1(const Dataset& dataset, Model& stage1, AdaptivePrior& prior, const TrainConfig& cfg,
                        const PipelineConfig& pcfg, const TrainHooks& hooks) {
    cfg.validate();
    pcfg.validate();
    TrainTrace trace;
    if (cfg.iters_stage1 == 0) return trace;
    if (stage1.bayesian()) prior.validate_against(stage1.posterior());
    cast_model(stage1, cfg.precision);

    PairSampler sampler(dataset, cfg.crop_size, cfg.seed);
    EpsilonSource eps(cfg.seed, "stage1");
    Adam adam;
    ElboOptions opts;
    opts.kl_weight = cfg.effective_kl_weight(dataset.size());
    opts.n_mc = cfg.n_mc;
    opts.data_loss = cfg.data_loss;
    const NetworkFn network = [&stage1](Tape& tape, std::span<const Var> w, const Tensor& x) {
        return stage1.apply(tape, w, x);
    };

    for (std::size_t step = 0; step < cfg.iters_stage1; ++step) {
        const double lr = cosine_lr(step, cfg.iters_stage1, cfg.lr_init, cfg.lr_final);
        StepRecord rec;
        rec.step = step;
        rec.lr = lr;
        try {
            std::vector<Example> batch;
            for (auto& ex : sampler.next_batch(cfg.batch_size)) {
                batch.push_back(Example{coarse_input(ex.x, pcfg), coarse_illumination_target(ex.x, ex.y, pcfg)});
            }
            Tape tape;
            const BoundParams bound = stage1.bind(tape, true);
            Var loss;
            if (stage1.bayesian()) {
                const ElboLoss elbo =
                    elbo_minibatch_loss(tape, batch, network, bound.weights, bound.rho, prior, opts, eps);
                loss = elbo.total;
                rec.data_term = elbo.data_term;
                rec.kl_term = elbo.kl_term;
            } else {
                for (const auto& ex : batch) {
                    Var diff = ad::sub(stage1.apply(tape, bound.weights, ex.x), tape.constant(ex.y));
                    Var err = cfg.data_loss == DataLoss::L2 ? ad::sum(ad::square(diff)) : ad::sum(ad::abs(diff));
                    loss = loss.valid() ? ad::add(loss, err) : err;
                }
                loss = ad::scale(loss, 1.0 / static_cast<double>(batch.size()));
                rec.data_term = loss.value().item();
            }
            rec.total = loss.value().item();
            if (!std::isfinite(rec.total)) throw NumericError("loss is not finite");
            optimize(tape, loss, stage1, bound, adam, lr, cfg.grad_clip);
            if (stage1.bayesian()) prior = ema_update(std::move(prior), stage1.posterior());
        } catch (const NumericError& e) {
            throw DivergenceError(step, e.what());
        }
        trace.steps.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
    }
    return trace;
}

TrainTrace train_stage2(const Dataset& dataset, Model& stage2, const TrainConfig& cfg, const PipelineConfig& pcfg,
                        const TrainHooks& hooks) {
    cfg.validate();
    pcfg.validate();
    if (stage2.bayesian()) throw ContractError("stage II trains a deterministic model");
    TrainTrace trace;
    if (cfg.iters_stage2 == 0) return trace;
    cast_model(stage2, cfg.precision);

    PairSampler sampler(dataset, cfg.crop_size, cfg.seed);
    Adam adam;
    for (std::size_t step = 0; step < cfg.iters_stage2; ++step) {
        const double lr = cosine_lr(step, cfg.iters_stage2, cfg.lr_init, cfg.lr_final);
        StepRecord rec;
        rec.step = step;
        rec.lr = lr;
        try {
            const auto batch = sampler.next_batch(cfg.batch_size);
            Tape tape;
            const BoundParams bound = stage2.bind(tape, true);
            Var loss;
            for (const auto& ex : batch) {
                if (stage2.spec().in_channels != 2 * ex.x.dim(0)) {
                    throw DimensionError("stage-II model expects " + std::to_string(stage2.spec().in_channels) +
                                         " input channels, [x, z] has " + std::to_string(2 * ex.x.dim(0)));
                }
                Tensor z = illumination_target(ex.x, ex.y, pcfg);
                if (hooks.on_stage2_example) hooks.on_stage2_example(ex.x, ex.y, z);
                Var pred = stage2.apply(tape, bound.weights, concat_channels(ex.x, z));
                Var err = ad::mean(ad::abs(ad::sub(pred, tape.constant(ex.y))));
                loss = loss.valid() ? ad::add(loss, err) : err;
            }
            loss = ad::scale(loss, 1.0 / static_cast<double>(batch.size()));
            rec.data_term = rec.total = loss.value().item();
            if (!std::isfinite(rec.total)) throw NumericError("loss is not finite");
            optimize(tape, loss, stage2, bound, adam, lr, cfg.grad_clip);
        } catch (const NumericError& e) {
            throw DivergenceError(step, e.what());
        }
        trace.steps.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
    }
    return trace;
}

}  // namespace bem

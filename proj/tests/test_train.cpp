#include <gtest/gtest.h>

#include <cmath>

#include "bem/error.hpp"
#include "bem/train.hpp"
#include "test_support.hpp"

using namespace bem;
using bem::testing::random_tensor;

namespace {

Dataset toy(std::size_t count, std::size_t size = 16, std::size_t targets = 2) {
    OneToManyOptions o;
    o.count = count;
    o.size = size;
    o.n_targets = targets;
    return Dataset{gen_one_to_many(17, o)};
}

TrainConfig quick(std::size_t iters) {
    TrainConfig c;
    c.batch_size = 4;
    c.iters_stage1 = iters;
    c.iters_stage2 = iters;
    c.lr_init = 3e-3;
    c.lr_final = 1e-4;
    c.crop_size = 16;
    c.seed = 3;
    return c;
}

PipelineConfig quarter() {
    PipelineConfig p;
    p.r = Rational{1, 4};
    return p;
}

}  // namespace

TEST(Schedule, CosineEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3, 1e-5), 1e-3);
    EXPECT_NEAR(cosine_lr(100, 100, 1e-3, 1e-5), 1e-5, 1e-18);
    EXPECT_NEAR(cosine_lr(50, 100, 1e-3, 1e-5), 0.5 * (1e-3 + 1e-5), 1e-15);
}

TEST(Clip, ScalesToMaxNorm) {
    std::vector<Tensor> g{Tensor({2}, {3.0, 0.0}), Tensor({1}, {4.0})};
    EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
    EXPECT_NEAR(g[0][0], 0.6, 1e-15);
    EXPECT_NEAR(g[1][0], 0.8, 1e-15);
    std::vector<Tensor> small{Tensor({1}, {0.5})};
    clip_grad_norm(small, 1.0);
    EXPECT_EQ(small[0][0], 0.5);
}

TEST(Adam, FirstStepIsSignTimesLr) {
    Tensor p({3}, {1.0, 1.0, 1.0});
    std::vector<Tensor*> ps{&p};
    std::vector<Tensor> gs{Tensor({3}, {0.5, -2.0, 1e-3})};
    Adam adam;
    adam.step(ps, gs, 0.01);
    EXPECT_NEAR(p[0], 0.99, 1e-9);
    EXPECT_NEAR(p[1], 1.01, 1e-9);
    EXPECT_NEAR(p[2], 0.99, 1e-7);
    EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, MinimizesQuadratic) {
    Tensor p({2}, {3.0, -2.0});
    std::vector<Tensor*> ps{&p};
    Adam adam;
    for (int i = 0; i < 2000; ++i) {
        std::vector<Tensor> g{Tensor({2}, {2 * (p[0] - 1.0), 2 * (p[1] + 0.5)})};
        adam.step(ps, g, 0.01);
    }
    EXPECT_NEAR(p[0], 1.0, 1e-3);
    EXPECT_NEAR(p[1], -0.5, 1e-3);
}

TEST(TrainConfig, KlWeightDefaultsToBatchOverDataset) {
    TrainConfig c;
    c.batch_size = 8;
    EXPECT_DOUBLE_EQ(c.effective_kl_weight(64), 0.125);
    c.kl_weight = 0.3;
    EXPECT_DOUBLE_EQ(c.effective_kl_weight(64), 0.3);
    c.n_mc = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PairSampler, EpochsAndTargetFrequencies) {
    const Dataset ds = toy(10);
    PairSampler s(ds, 8, 5);
    for (int epoch = 0; epoch < 400; ++epoch) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const Example ex = s.next();
            ASSERT_EQ(ex.x.shape(), (Shape{3, 8, 8}));
        }
        // Every sample visited exactly once per epoch.
        for (const auto& v : s.visits()) ASSERT_EQ(v[0] + v[1], static_cast<std::size_t>(epoch + 1));
    }
    for (const auto& v : s.visits()) EXPECT_NEAR(static_cast<double>(v[0]) / (v[0] + v[1]), 0.5, 0.1);
}

TEST(PairSampler, CropIsSharedWindow) {
    const Dataset ds = toy(1, 16, 1);
    PairSampler s(ds, 16, 1);
    const Example ex = s.next();
    EXPECT_EQ(ex.x, ds.samples[0].x);
    EXPECT_EQ(ex.y, ds.samples[0].targets[0]);
    EXPECT_THROW(PairSampler(ds, 32, 1), ConfigError);
    EXPECT_THROW(PairSampler(Dataset{}, 8, 1), ContractError);
}

TEST(Crop, Window) {
    const Tensor t = random_tensor({2, 6, 6}, 1);
    const Tensor c = crop(t, 2, 1, 3);
    EXPECT_EQ(c.at(1, 0, 0), t.at(1, 2, 1));
    EXPECT_EQ(c.at(0, 2, 2), t.at(0, 4, 3));
    EXPECT_THROW(crop(t, 4, 0, 3), DimensionError);
}

TEST(TrainStage1, BayesianLossDropsAndIsReproducible) {
    const Dataset ds = toy(8);
    const BackboneSpec spec{3, 3, 4, 1, 1, Activation::SiLU};
    auto run = [&] {
        Model f = Model::build(spec, ModelKind::Bayesian, 1);
        AdaptivePrior prior = AdaptivePrior::from_posterior(f.posterior());
        const TrainTrace t = train_stage1(ds, f, prior, quick(60), quarter());
        return std::make_tuple(std::move(f), std::move(prior), t);
    };
    auto [f1, p1, t1] = run();
    auto [f2, p2, t2] = run();
    ASSERT_EQ(t1.steps.size(), 60u);
    EXPECT_EQ(t1.steps.front().kl_term, 0.0);
    double early = 0, late = 0;
    for (int i = 0; i < 10; ++i) {
        early += t1.steps[i].data_term;
        late += t1.steps[50 + i].data_term;
    }
    EXPECT_LT(late, early);
    EXPECT_EQ(p1.step, 60u);
    for (std::size_t i = 0; i < f1.posterior().size(); ++i) {
        EXPECT_EQ(f1.posterior().layer(i).mu, f2.posterior().layer(i).mu);
        EXPECT_EQ(f1.posterior().layer(i).rho, f2.posterior().layer(i).rho);
        EXPECT_EQ(p1.mu_ema[i], p2.mu_ema[i]);
    }
    for (std::size_t i = 0; i < t1.steps.size(); ++i) EXPECT_EQ(t1.steps[i].total, t2.steps[i].total);
}

TEST(TrainStage1, DeterministicBaselineHasNoKl) {
    const Dataset ds = toy(4);
    Model f = Model::build(BackboneSpec{3, 3, 4, 1, 1, Activation::SiLU}, ModelKind::Deterministic, 1);
    AdaptivePrior unused;
    const TrainTrace t = train_stage1(ds, f, unused, quick(10), quarter());
    ASSERT_EQ(t.steps.size(), 10u);
    for (const auto& s : t.steps) {
        EXPECT_EQ(s.kl_term, 0.0);
        EXPECT_EQ(s.total, s.data_term);
    }
}

TEST(TrainStage1, DivergenceReportsStep) {
    const Dataset ds = toy(4);
    Model f = Model::build(BackboneSpec{3, 3, 4, 1, 1, Activation::SiLU}, ModelKind::Deterministic, 1);
    AdaptivePrior unused;
    TrainConfig c = quick(50);
    c.lr_init = c.lr_final = 1e30;
    try {
        train_stage1(ds, f, unused, c, quarter());
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 1u);
        EXPECT_LT(e.step(), 50u);
    }
}

TEST(TrainStage2, SupervisionAndNoStageOneCalls) {
    const Dataset ds = toy(4);
    const PipelineConfig p = quarter();
    Model g = Model::build(BackboneSpec{6, 3, 4, 1, 1, Activation::SiLU}, ModelKind::Deterministic, 2);
    const auto bayes_before = global_forward_count(ModelKind::Bayesian);
    std::size_t examples = 0;
    double worst = 0.0;
    TrainHooks hooks;
    hooks.on_stage2_example = [&](const Tensor& x, const Tensor& y, const Tensor& z) {
        ++examples;
        worst = std::max(worst, max_abs_diff(z, illumination_target(x, y, p)));
    };
    const TrainTrace t = train_stage2(ds, g, quick(5), p, hooks);
    EXPECT_EQ(t.steps.size(), 5u);
    EXPECT_EQ(examples, 20u);
    EXPECT_EQ(worst, 0.0);
    EXPECT_EQ(global_forward_count(ModelKind::Bayesian), bayes_before);
    EXPECT_EQ(g.counter().calls(), 20u);
}

TEST(TrainStage2, RejectsWrongInputChannels) {
    const Dataset ds = toy(2);
    Model g = Model::build(BackboneSpec{3, 3, 4, 1, 1, Activation::SiLU}, ModelKind::Deterministic, 2);
    EXPECT_THROW(train_stage2(ds, g, quick(1), quarter()), DimensionError);
}

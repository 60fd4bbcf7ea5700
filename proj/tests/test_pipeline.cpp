#include <gtest/gtest.h>

#include <cmath>

#include "bem/error.hpp"
#include "bem/pipeline.hpp"
#include "test_support.hpp"

using namespace bem;
using bem::testing::random_tensor;

TEST(Rational, Parse) {
    EXPECT_EQ(Rational::parse("1/16"), (Rational{1, 16}));
    EXPECT_EQ(Rational::parse("0.25"), (Rational{1, 4}));
    EXPECT_EQ(Rational::parse("1"), (Rational{1, 1}));
    EXPECT_EQ(Rational::parse("2/8"), (Rational{1, 4}));
    EXPECT_EQ(Rational::parse("1/16").to_string(), "1/16");
    for (const char* bad : {"0", "-1/4", "abc", "1/0", "", "1/x"}) EXPECT_THROW(Rational::parse(bad), ConfigError) << bad;
}

TEST(Rational, Scale) {
    EXPECT_EQ((Rational{1, 16}).scale(128), 8u);
    EXPECT_THROW((Rational{1, 16}).scale(100), ConfigError);
}

TEST(PipelineConfig, Validation) {
    PipelineConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_DOUBLE_EQ(c.keep_fraction(), 1.0 / 16);
    c.alpha = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.alpha = 0.025;
    c.r = Rational{2, 1};
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Lowpass, IdempotentAndPreservesConstants) {
    const Tensor x = random_tensor({3, 32, 24}, 1, 0, 1);
    for (double keep : {1.0 / 16, 0.25, 0.5}) {
        const Tensor once = lowpass(x, keep);
        EXPECT_LT(max_abs_diff(lowpass(once, keep), once), 1e-9) << keep;
        EXPECT_LT(max_abs_diff(lowpass(Tensor::full({3, 32, 24}, 0.42), keep), Tensor::full({3, 32, 24}, 0.42)), 1e-10);
    }
}

TEST(Lowpass, EnergyNonIncreasingAndFullKeepIsIdentity) {
    const Tensor x = random_tensor({1, 16, 16}, 2);
    auto energy = [](const Tensor& t) {
        double s = 0;
        for (double v : t.data()) s += v * v;
        return s;
    };
    EXPECT_LE(energy(lowpass(x, 0.25)), energy(x));
    EXPECT_EQ(lowpass(x, 1.0), x);
    EXPECT_THROW(lowpass(x, 0.0), DomainError);
}

TEST(Lowpass, RemovesHighFrequency) {
    // Nyquist checkerboard is removed entirely by any keep < 1.
    Tensor x({1, 8, 8});
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t xx = 0; xx < 8; ++xx) x.at(0, y, xx) = 0.5 + 0.5 * (((y + xx) % 2) ? 1.0 : -1.0);
    EXPECT_LT(max_abs_diff(lowpass(x, 0.5), Tensor::full({1, 8, 8}, 0.5)), 1e-12);
}

TEST(CoarseInput, Shape) {
    PipelineConfig c;
    const Tensor z = coarse_input(random_tensor({3, 128, 128}, 3, 0, 1), c);
    EXPECT_EQ(z.shape(), (Shape{3, 8, 8}));
    EXPECT_THROW(coarse_input(Tensor::zeros({3, 100, 128}), c), ConfigError);
}

TEST(Illumination, WorkedPair) {
    const Tensor x({1}, {0.5}), z({1}, {0.8});
    const Tensor y = compose_illumination(x, z, 0.025);
    EXPECT_NEAR(y[0], 0.416, 1e-15);
    EXPECT_NEAR(invert_illumination(x, y, 0.025)[0], 0.8, 1e-12);
}

TEST(Illumination, RoundTripRandom) {
    Rng rng(4, "eq8");
    Tensor x({1000}), z({1000});
    for (std::size_t i = 0; i < 1000; ++i) {
        x[i] = rng.uniform(0, 1);
        z[i] = rng.uniform(0, 2);
    }
    EXPECT_LT(max_abs_diff(invert_illumination(x, compose_illumination(x, z, 0.025), 0.025), z), 1e-9);
}

TEST(Illumination, Edges) {
    // x = 0: z = sqrt(y / alpha)
    EXPECT_NEAR(invert_illumination(Tensor({1}, {0.0}), Tensor({1}, {0.1}), 0.025)[0], 2.0, 1e-12);
    EXPECT_EQ(invert_illumination(Tensor({1}, {0.3}), Tensor({1}, {0.0}), 0.025)[0], 0.0);
    EXPECT_THROW(invert_illumination(Tensor({1}, {0.3}), Tensor({1}, {-0.1}), 0.025), DomainError);
    EXPECT_THROW(invert_illumination(Tensor({1}, {0.3}), Tensor({1}, {0.1}), 0.0), DomainError);
}

TEST(Illumination, TargetIsLowpassOfClosedForm) {
    PipelineConfig c;
    c.r = Rational{1, 4};
    const Tensor x = random_tensor({3, 16, 16}, 5, 0, 1), y = random_tensor({3, 16, 16}, 6, 0, 1);
    Tensor z(x.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = (std::sqrt(x[i] * x[i] + 4 * c.alpha * y[i]) - x[i]) / (2 * c.alpha);
    EXPECT_LT(max_abs_diff(illumination_target(x, y, c), lowpass(z, 0.25)), 1e-9);
    EXPECT_EQ(coarse_illumination_target(x, y, c).shape(), (Shape{3, 4, 4}));
}

TEST(Stage2, ChannelCheck) {
    const Model g = Model::build(BackboneSpec{3, 3, 2, 1, 1, Activation::SiLU}, ModelKind::Deterministic, 1);
    EXPECT_THROW(stage2_forward(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8}), g), DimensionError);
}

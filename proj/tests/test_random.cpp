#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <thread>

#include "bem/random.hpp"

using namespace bem;

TEST(EpsilonSource, ReplayableByIndex) {
    EpsilonSource a(42, "stage1");
    std::vector<double> first;
    for (int i = 0; i < 100; ++i) first.push_back(a.next());
    EpsilonSource b(42, "stage1");
    b.seek(50);
    EXPECT_EQ(b.next(), first[50]);
    EXPECT_EQ(a.at(7), first[7]);
    EXPECT_EQ(a.position(), 100u);
}

TEST(EpsilonSource, StreamsAndSeedsDiffer) {
    EXPECT_NE(EpsilonSource(1, "infer:0").at(0), EpsilonSource(1, "infer:1").at(0));
    EXPECT_NE(EpsilonSource(1, "infer:0").at(0), EpsilonSource(2, "infer:0").at(0));
    EXPECT_EQ(stream_id("data"), stream_id("data"));
    EXPECT_NE(stream_id("data"), stream_id("init"));
}

TEST(EpsilonSource, StandardNormalMoments) {
    EpsilonSource e(3, "moments");
    const int n = 200000;
    double s = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = e.next();
        s += v;
        s2 += v * v;
        s4 += v * v * v * v;
    }
    EXPECT_LT(std::abs(s / n), 4.0 / std::sqrt(n));
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
    EXPECT_NEAR(s4 / n, 3.0, 0.1);
}

TEST(EpsilonSource, DrawAdvancesCursor) {
    EpsilonSource e(5, "draw");
    const Tensor t = e.draw({2, 3});
    EXPECT_EQ(e.position(), 6u);
    EXPECT_EQ(t[4], e.at(4));
}

TEST(EpsilonSource, ThreadIndependent) {
    std::vector<double> a(64), b(64);
    std::thread t1([&] { EpsilonSource e(9, "infer:3"); for (auto& v : a) v = e.next(); });
    std::thread t2([&] { EpsilonSource e(9, "infer:3"); for (auto& v : b) v = e.next(); });
    t1.join();
    t2.join();
    EXPECT_EQ(a, b);
}

TEST(Rng, UniformRangeAndBelow) {
    Rng r(11, "data");
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ++counts[r.below(5)];
    }
    for (int c : counts) EXPECT_NEAR(c / 50000.0, 0.2, 0.01);
    Rng a(11, "data"), b(11, "data");
    EXPECT_EQ(a.next_u64(), b.next_u64());
}

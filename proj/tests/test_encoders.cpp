#include <gtest/gtest.h>

#include <cmath>

#include "coordx/encoders.hpp"
#include "support/reference.hpp"

using namespace coordx;

TEST(PositionalEncoding, HandValuesAtHalf) {
    // p = 0.5, d = 2: sin(pi/2)=1, cos(pi/2)=0, sin(pi)=0, cos(pi)=-1, raw 0.5
    Tensor<double> x({1, 1}, {0.5});
    auto e = positional_encode(x, 2);
    ASSERT_EQ(e.shape(), (Shape{1, 5}));
    EXPECT_NEAR(e(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(e(0, 1), 0.0, 1e-15);
    EXPECT_NEAR(e(0, 2), 0.0, 1e-15);
    EXPECT_NEAR(e(0, 3), -1.0, 1e-15);
    EXPECT_EQ(e(0, 4), 0.5);
}

TEST(PositionalEncoding, WidthAndLayoutMatchReference) {
    Rng rng(3);
    for (int k = 1; k <= 3; ++k) {
        for (int d : {1, 4, 10}) {
            EncodingSpec spec{EncodingKind::positional, d};
            EXPECT_EQ(spec.width(k), static_cast<std::size_t>(2 * k * d + k));
            Tensor<double> x({5, static_cast<std::size_t>(k)});
            for (auto& v : x.values()) v = rng.uniform(-1, 1);
            auto e = encode(x, spec);
            ASSERT_EQ(e.cols(), spec.width(k));
            for (std::size_t i = 0; i < 5; ++i) {
                auto r = ref::encode(std::vector<double>(x.row(i), x.row(i) + k), spec);
                for (std::size_t j = 0; j < r.size(); ++j) EXPECT_NEAR(e(i, j), r[j], 1e-12);
            }
        }
    }
}

TEST(PositionalEncoding, NoneIsIdentityAndBadCountRejected) {
    Tensor<double> x({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(encode(x, EncodingSpec{}), x);
    EXPECT_EQ(EncodingSpec{}.width(3), 3u);
    EXPECT_THROW(positional_encode(x, 0), ConfigError);
    EXPECT_THROW((EncodingSpec{EncodingKind::positional, 0}.validate()), ConfigError);
}

TEST(SirenInit, Bounds) {
    EXPECT_DOUBLE_EQ(siren_bound(2, true, 30), 0.5);
    EXPECT_DOUBLE_EQ(siren_bound(64, false, 30), std::sqrt(6.0 / 64.0) / 30.0);
}

TEST(SirenInit, DrawsFillTheInterval) {
    Rng rng(1);
    for (bool first : {true, false}) {
        const std::size_t fan_in = first ? 2 : 64;
        auto w = siren_init<double>(rng, fan_in, 256, first, 30.0);
        ASSERT_EQ(w.shape(), (Shape{256, fan_in}));
        const double bound = siren_bound(fan_in, first, 30.0);
        double lo = 0, hi = 0, sum = 0;
        for (double v : w.values()) {
            ASSERT_LE(std::abs(v), bound);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
        }
        EXPECT_GT(hi, 0.95 * bound);
        EXPECT_LT(lo, -0.95 * bound);
        // mean of U(-b, b) over n draws: sd b / sqrt(3n)
        EXPECT_LT(std::abs(sum / w.size()), 4 * bound / std::sqrt(3.0 * w.size()));
    }
    EXPECT_THROW(siren_init<double>(rng, 0, 3, true, 30), ConfigError);
    EXPECT_THROW(siren_init<double>(rng, 3, 3, true, 0), ConfigError);
}

TEST(Encoders, Names) {
    EXPECT_EQ(to_string(EncodingKind::positional), "positional");
    EXPECT_EQ(to_string(ActivationKind::relu), "relu");
}

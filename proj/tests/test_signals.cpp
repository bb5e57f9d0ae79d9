#include <gtest/gtest.h>

#include <sstream>

#include "coordx/signals.hpp"

using namespace coordx;

TEST(Pnm, ReadsHandWrittenBytesWithComments) {
    std::string bytes = "P5\n# comment line\n3 2\n# another\n255\n";
    bytes += std::string{char(0), char(51), char(255), char(102), char(204), char(153)};
    std::istringstream is(bytes);
    auto img = read_pnm(is);
    ASSERT_EQ(img.shape(), (Shape{2, 3, 1}));
    EXPECT_DOUBLE_EQ(img[1], 0.2);
    EXPECT_DOUBLE_EQ(img[2], 1.0);
    EXPECT_DOUBLE_EQ(img[3], 0.4);
}

TEST(Pnm, MaxvalRescales) {
    std::string bytes = "P5 1 1 15\n";
    bytes.push_back(char(5));
    std::istringstream is(bytes);
    EXPECT_DOUBLE_EQ(read_pnm(is)[0], 1.0 / 3.0);
}

TEST(Pnm, RoundTripThroughQuantization) {
    Tensor<double> img({2, 2, 3});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i * 20) / 255.0;
    std::stringstream ss;
    write_pnm(ss, img);
    EXPECT_EQ(ss.str().substr(0, 11), "P6\n2 2\n255\n");
    auto back = read_pnm(ss);
    EXPECT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1e-15);
}

TEST(Pnm, RejectsBadInput) {
    std::istringstream p3("P3 1 1 255 0");
    EXPECT_THROW(read_pnm(p3), ParseError);
    std::istringstream truncated("P5 2 2 255\nab");
    EXPECT_THROW(read_pnm(truncated), ParseError);
    std::istringstream wide("P5 1 1 65535\n\0\0");
    EXPECT_THROW(read_pnm(wide), ParseError);
    std::istringstream junk("P5 x 1 255\n");
    EXPECT_THROW(read_pnm(junk), ParseError);
    std::stringstream out;
    EXPECT_THROW(write_pnm(out, Tensor<double>({2, 2, 2})), DimensionError);
    EXPECT_THROW(read_pnm(std::string("/nonexistent/x.pgm")), IoError);
}

TEST(Pnm, QuantizeClampsAndRounds) {
    EXPECT_EQ(quantize_u8(-1.0), 0);
    EXPECT_EQ(quantize_u8(std::nan("")), 0);
    EXPECT_EQ(quantize_u8(2.0), 255);
    EXPECT_EQ(quantize_u8(0.5), 128);
    EXPECT_EQ(quantize_u8(1.0 / 255.0), 1);
}

TEST(Psnr, HandValues) {
    Tensor<double> a({4, 1}, {0.1, 0.1, 0.1, 0.1}), b({4, 1}, {0.2, 0.0, 0.2, 0.0});
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);  // MSE 0.01
    Tensor<double> c({1, 1}, {0.5}), d({1, 1}, {0.5 + 1e-3});
    EXPECT_NEAR(psnr(c, d), 60.0, 1e-9);
    EXPECT_EQ(psnr(a, a), kPsnrCap);
    // Values are clamped to [0, 1] before comparison.
    Tensor<double> over({1, 1}, {3.0}), one({1, 1}, {1.0});
    EXPECT_EQ(psnr(over, one), kPsnrCap);
    EXPECT_THROW(psnr(a, Tensor<double>({2, 1})), DimensionError);
}

TEST(Iou, HandValues) {
    EXPECT_DOUBLE_EQ(iou({1, 1, 0, 0}, {1, 0, 1, 0}), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(iou({0, 0}, {0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(iou({1, 0}, {0, 1}), 0.0);
    EXPECT_THROW(iou({1}, {1, 0}), DimensionError);
    Tensor<double> z({3, 1}, {-0.1, 0.0, 2.0});
    EXPECT_EQ(labels_from_logits(z), (Labels{0, 0, 1}));
}

TEST(IouSets, SphereInsideFractions) {
    Rng rng(1);
    auto s = synth_signal("sphere_occ", {}, rng);
    const std::size_t n = 40000;
    auto sets = build_iou_sets(s, n, 0.05, rng);
    auto frac = [](const Labels& l) {
        double c = 0;
        for (auto v : l) c += v;
        return c / static_cast<double>(l.size());
    };
    // Volume ratios: ball over cube, and inner over full shell.
    const double easy = std::numbers::pi / 6.0 * 0.125;
    const double hard = (0.5 * 0.5 * 0.5 - 0.45 * 0.45 * 0.45) / (0.55 * 0.55 * 0.55 - 0.45 * 0.45 * 0.45);
    EXPECT_NEAR(easy, 0.06545, 1e-5);
    EXPECT_NEAR(hard, 0.45017, 1e-5);
    EXPECT_NEAR(frac(sets.easy_labels), easy, 4 * std::sqrt(easy * (1 - easy) / n));
    EXPECT_NEAR(frac(sets.hard_labels), hard, 4 * std::sqrt(hard * (1 - hard) / n));
    for (std::size_t i = 0; i < n; ++i) ASSERT_LE(std::abs(s.surface_distance(sets.hard.row(i))), 0.05);
}

TEST(IouSets, Validation) {
    Rng rng(2);
    auto img = synth_signal("rank1_image", {}, rng, {8, 8});
    EXPECT_THROW(build_iou_sets(img, 10, 0.05, rng), ConfigError);
    auto s = synth_signal("sphere_occ", {}, rng);
    EXPECT_THROW(build_iou_sets(s, 0, 0.05, rng), ConfigError);
    EXPECT_THROW(build_iou_sets(s, 10, 0.0, rng), ConfigError);
    auto far = synth_signal("sphere_occ", {{"radius", 0.01}}, rng);
    EXPECT_THROW(build_iou_sets(far, 10, 1e-9, rng, 10), ConfigError);
}

TEST(Synthetic, RankOneImageHasRankOne) {
    Rng rng(3);
    auto s = synth_signal("rank1_image", {}, rng, {12, 9});
    auto v = s.canonical_values();
    auto at = [&](std::size_t i, std::size_t j) { return v(i * 9 + j, 0); };
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 9; ++j)
            EXPECT_NEAR(at(i, j) * at(0, 0), at(i, 0) * at(0, j), 1e-14);
}

TEST(Synthetic, DefaultsShapesAndRanges) {
    for (const auto& name : synthetic_signal_names()) {
        Rng rng(4);
        auto s = synth_signal(name, {}, rng);
        EXPECT_EQ(s.extents.size(), static_cast<std::size_t>(s.k)) << name;
        Rng small(4);
        Shape ext(static_cast<std::size_t>(s.k), 6);
        auto t = synth_signal(name, {}, small, ext);
        auto v = t.canonical_values();
        EXPECT_EQ(v.shape(), (Shape{shape_product(ext), static_cast<std::size_t>(t.o)})) << name;
        for (double x : v.values()) {
            EXPECT_GE(x, 0.0) << name;
            EXPECT_LE(x, 1.0) << name;
        }
    }
    Rng rng(5);
    EXPECT_THROW(synth_signal("nope", {}, rng), ConfigError);
    EXPECT_THROW(synth_signal("sphere_occ", {}, rng, {8, 8}), ConfigError);
}

TEST(Synthetic, SameSeedSameSignal) {
    Rng a(9), b(9);
    auto s = synth_signal("gaussians_image", {}, a, {10, 10});
    auto t = synth_signal("gaussians_image", {}, b, {10, 10});
    EXPECT_EQ(s.canonical_values(), t.canonical_values());
}

TEST(Synthetic, ImageSignalSamplesPixels) {
    Tensor<double> img({2, 3, 1}, {0.0, 0.1, 0.2, 0.3, 0.4, 0.5});
    auto s = image_signal(img);
    EXPECT_EQ(s.extents, (Shape{2, 3}));
    auto v = s.canonical_values();
    for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(v[i], img[i]);
}

#include <gtest/gtest.h>

#include "coordx/render.hpp"
#include "coordx/train.hpp"

using namespace coordx;

namespace {

DenseGrid3 random_grid(std::array<std::size_t, 3> res, std::size_t o, Rng& rng, Vec3 lo = {-1, -1, -1},
                       Vec3 hi = {1, 1, 1}) {
    DenseGrid3 g;
    g.res = res;
    g.lo = lo;
    g.hi = hi;
    g.values = Tensor<double>({res[0], res[1], res[2], o});
    for (auto& v : g.values.values()) v = rng.uniform(-1, 1);
    return g;
}

// Independent corner blend: locate the cell by scanning node positions.
double oracle_trilinear(const DenseGrid3& g, const Vec3& p) {
    std::size_t idx[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        const auto nodes = linspace(g.res[a], g.lo[a], g.hi[a]);
        std::size_t c = 0;
        while (c + 2 < nodes.size() && p[a] > nodes[c + 1]) ++c;
        idx[a] = c;
        t[a] = (p[a] - nodes[c]) / (nodes[c + 1] - nodes[c]);
    }
    auto lerp = [](double a, double b, double s) { return a + s * (b - a); };
    double c[2][2];
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            c[dx][dy] = lerp(g.at(idx[0] + dx, idx[1] + dy, idx[2]), g.at(idx[0] + dx, idx[1] + dy, idx[2] + 1), t[2]);
    return lerp(lerp(c[0][0], c[0][1], t[1]), lerp(c[1][0], c[1][1], t[1]), t[0]);
}

}  // namespace

TEST(Trilinear, ReproducesLatticeValuesExactly) {
    Rng rng(1);
    auto g = random_grid({5, 4, 7}, 2, rng, {-1, 0, -0.3}, {1, 2.5, 0.9});
    const auto nodes = grid_points(dense_lattice(g.res, g.lo, g.hi));
    double out[2];
    for (std::size_t n = 0; n < nodes.rows(); ++n) {
        trilinear(g, {nodes(n, 0), nodes(n, 1), nodes(n, 2)}, out);
        ASSERT_EQ(out[0], g.values.data()[n * 2]);
        ASSERT_EQ(out[1], g.values.data()[n * 2 + 1]);
    }
}

TEST(Trilinear, MatchesCornerBlendOracle) {
    Rng rng(2);
    auto g = random_grid({6, 3, 4}, 1, rng);
    for (int i = 0; i < 2000; ++i) {
        Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        EXPECT_NEAR(trilinear(g, p), oracle_trilinear(g, p), 1e-12);
    }
}

TEST(Trilinear, LinearFieldIsReproducedAndOutsideIsZero) {
    DenseGrid3 g;
    g.res = {3, 3, 3};
    g.values = Tensor<double>({3, 3, 3, 1});
    const auto nodes = grid_points(dense_lattice(g.res, g.lo, g.hi));
    for (std::size_t n = 0; n < nodes.rows(); ++n) g.values[n] = 1 + 2 * nodes(n, 0) - nodes(n, 1) + 0.5 * nodes(n, 2);
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        EXPECT_NEAR(trilinear(g, p), 1 + 2 * p[0] - p[1] + 0.5 * p[2], 1e-12);
    }
    EXPECT_EQ(trilinear(g, {1.01, 0, 0}), 0.0);
    EXPECT_EQ(trilinear(g, {0, -1.5, 0}), 0.0);
    EXPECT_EQ(trilinear(g, {0, 0, std::nan("")}), 0.0);
}

TEST(RayAccumulation, TwoSampleHandTrace) {
    std::vector<double> s{1, 2}, d{0.5, 0.5}, c{1, 1};
    auto r = accumulate_ray(s, d, c);
    EXPECT_NEAR(r.color, 0.7769, 1e-4);
    EXPECT_NEAR(r.color, (1 - std::exp(-0.5)) + std::exp(-0.5) * (1 - std::exp(-1.0)), 1e-15);
    EXPECT_DOUBLE_EQ(r.transmittance[0], 1.0);
    EXPECT_DOUBLE_EQ(r.transmittance[1], std::exp(-0.5));
    EXPECT_NEAR(r.final_transmittance, std::exp(-1.5), 1e-15);
    EXPECT_THROW(accumulate_ray(s, d, std::vector<double>{1}), DimensionError);
}

TEST(RayAccumulation, LimitingCases) {
    std::vector<double> zero(8, 0.0), d(8, 0.1), c(8, 0.7);
    auto r = accumulate_ray(zero, d, c);
    EXPECT_EQ(r.color, 0.0);
    EXPECT_EQ(r.final_transmittance, 1.0);
    std::vector<double> slab{0, 0, INFINITY, 0};
    std::vector<double> d4(4, 0.1), c4{0.2, 0.2, 0.9, 0.2};
    auto o = accumulate_ray(slab, d4, c4);
    EXPECT_DOUBLE_EQ(o.color, 0.9);
    EXPECT_EQ(o.final_transmittance, 0.0);
}

TEST(RayAccumulation, TransmittanceMonotoneOnRandomRays) {
    Rng rng(4);
    for (int ray = 0; ray < 1000; ++ray) {
        const std::size_t n = 1 + rng.below(64);
        std::vector<double> s(n), d(n), c(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.uniform(0, 20);
            d[i] = rng.uniform(0, 0.1);
            c[i] = rng.uniform(0, 1);
        }
        auto r = accumulate_ray(s, d, c);
        for (std::size_t i = 1; i < n; ++i) ASSERT_LE(r.transmittance[i], r.transmittance[i - 1]);
        ASSERT_LE(r.final_transmittance, r.transmittance.back());
        ASSERT_GE(r.color, 0.0);
        ASSERT_LE(r.color, 1.0 + 1e-12);
    }
}

TEST(Raymarch, EmptyAndOpaqueVolumes) {
    DenseGrid3 g;
    g.res = {4, 4, 4};
    g.values = Tensor<double>({4, 4, 4, 1}, 0.0);
    Camera cam;
    cam.width = cam.height = 8;
    cam.samples = 16;
    MarchOptions opt;
    opt.logits = false;
    opt.background = 0.25;
    auto img = raymarch(g, cam, opt);
    for (double v : img.values()) EXPECT_DOUBLE_EQ(v, 0.25);
    g.values.fill(1e6);
    opt.albedo = 0.6;
    auto solid = raymarch(g, cam, opt);
    // The centre ray crosses the box; corner rays at 40 degrees miss it.
    EXPECT_NEAR(solid(4 * 8 + 4, 0), 0.6, 1e-12);
}

TEST(Raymarch, SphereLooksRound) {
    DenseGrid3 g;
    g.res = {33, 33, 33};
    g.values = Tensor<double>({33, 33, 33, 1});
    const auto nodes = grid_points(dense_lattice(g.res, g.lo, g.hi));
    for (std::size_t n = 0; n < nodes.rows(); ++n) {
        const double r = std::sqrt(nodes(n, 0) * nodes(n, 0) + nodes(n, 1) * nodes(n, 1) + nodes(n, 2) * nodes(n, 2));
        g.values[n] = r <= 0.5 ? 50.0 : 0.0;
    }
    Camera cam;
    cam.width = cam.height = 32;
    MarchOptions opt;
    opt.logits = false;
    auto img = raymarch(g, cam, opt);
    EXPECT_GT(img(16 * 32 + 16, 0), 0.99);
    EXPECT_LT(img(0, 0), 1e-9);
    // Left-right and up-down symmetry.
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) EXPECT_NEAR(img(r * 32 + c, 0), img(r * 32 + (31 - c), 0), 1e-9);
}

TEST(Camera, Validation) {
    Camera c;
    EXPECT_NO_THROW(c.validate());
    c.t_near = 5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = Camera{};
    c.up = {0, 0, 1};
    EXPECT_THROW(c.validate(), ConfigError);
    c = Camera{};
    c.samples = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = Camera{};
    const auto d = c.direction(63, 63);
    EXPECT_NEAR(dot(d, d), 1.0, 1e-15);
    EXPECT_LT(d[2], 0.0);
}

TEST(Slice, AnalyticSphereMatchesDisc) {
    auto field = [](const Vec3& p) { return 0.5 - std::sqrt(dot(p, p)); };  // positive inside
    const std::size_t res = 128;
    auto img = slice_image(field, 2, 0.0, res, true);
    const auto t = linspace(res, -1, 1);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < res; ++i)
        for (std::size_t j = 0; j < res; ++j) {
            const bool disc = t[i] * t[i] + t[j] * t[j] <= 0.25;
            agree += (img(i * res + j, 0) > 0.5) == disc;
        }
    EXPECT_GE(static_cast<double>(agree) / (res * res), 0.99);
    auto outside = slice_image(field, 0, 0.9, 32, true);
    for (double v : outside.values()) EXPECT_LT(v, 0.5);
}

TEST(Slice, AxisLayoutAndParsing) {
    auto pts = slice_points(1, 0.3, 3);
    EXPECT_EQ(pts(0, 1), 0.3);
    EXPECT_EQ(pts(1, 0), -1.0);  // row axis x
    EXPECT_EQ(pts(1, 2), 0.0);   // column axis z
    EXPECT_EQ(pts(3, 0), 0.0);
    EXPECT_EQ(parse_axis("x"), 0);
    EXPECT_EQ(parse_axis("2"), 2);
    EXPECT_THROW(parse_axis("w"), ConfigError);
    EXPECT_THROW(slice_points(3, 0, 4), ConfigError);
    auto flat = slice_image([](const Vec3&) { return 0.3; }, 0, 0, 8);
    for (double v : flat.values()) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(PrecomputeGrid, MatchesPointEvaluation) {
    Rng rng(5);
    ModelSpec s;
    s.k = 3;
    s.o = 2;
    s.m = 8;
    s.depth = 3;
    s.split = SplitSpec{{1, 2}, 2, 1, 2, Augment::plus, Fusion::product};
    auto p = init_params<double>(s, rng);
    auto g = precompute_grid(p, {4, 5, 3});
    const auto nodes = grid_points(dense_lattice(g.res, g.lo, g.hi));
    auto direct = evaluate_points(p, nodes);
    for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(g.values[i], direct[i], 1e-12);
    auto sl = slice_image(p, 2, 0.0, 6, false);
    auto via_points = evaluate_points(p, slice_points(2, 0.0, 6));
    for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(sl[i], via_points(i, 0), 1e-12);
    ModelSpec flat = s;
    flat.k = 2;
    flat.split = SplitSpec{{1, 1}, 2, 1, 2, Augment::plus, Fusion::product};
    auto q = init_params<double>(flat, rng);
    EXPECT_THROW(precompute_grid(q, {4, 4, 4}), TaskError);
    EXPECT_THROW(precompute_grid(p, {1, 4, 4}), ConfigError);
}

TEST(Slice, TrainedSphereLooksLikeDisc) {
    Rng rng(7);
    const auto sphere = synth_signal("sphere_occ", {}, rng, {32, 32, 32});
    ModelSpec s;
    s.k = 3;
    s.o = 1;
    s.m = 32;
    s.depth = 4;
    s.activation.kind = ActivationKind::relu;
    s.split = SplitSpec{{1, 1, 1}, 2, 2, 1, Augment::none, Fusion::product};
    TrainConfig cfg;
    cfg.epochs = 400;
    cfg.adam.lr = 1e-3;
    cfg.loss = LossKind::bce;
    cfg.batch = BatchMode::sampled;
    cfg.batch_points = 8192;
    cfg.iou_points = 1000;
    cfg.eval_every = 400;
    const auto report = fit(s, sphere, cfg);
    const auto grid = precompute_grid(report.params, {64, 64, 64});
    const std::size_t res = 128;
    const auto t = linspace(res, -1, 1);
    for (const auto& img : {slice_image(report.params, 2, 0.0, res), slice_image(grid, 2, 0.0, res, true)}) {
        std::size_t agree = 0;
        for (std::size_t i = 0; i < res; ++i)
            for (std::size_t j = 0; j < res; ++j) agree += (img(i * res + j, 0) > 0.5) == (t[i] * t[i] + t[j] * t[j] <= 0.25);
        EXPECT_GE(static_cast<double>(agree) / (res * res), 0.95);
    }
}

TEST(Raymarch, UntrainedModelIsNearUniform) {
    Rng rng(8);
    ModelSpec s;
    s.k = 3;
    s.o = 1;
    s.m = 16;
    s.depth = 3;
    s.split = SplitSpec{{1, 1, 1}, 2, 1, 1, Augment::none, Fusion::product};
    auto p = init_params<double>(s, rng);
    // Zero output layer: every logit is 0, density sigma_scale / 2 everywhere.
    p.tail.back().weight.fill(0.0);
    p.tail.back().bias.fill(0.0);
    Camera cam;
    cam.width = cam.height = 16;
    cam.origin = {0, 0, 10};
    cam.t_near = 9;
    cam.t_far = 11;
    cam.fov_deg = 2;
    const auto img = raymarch(precompute_grid(p, {8, 8, 8}), cam);
    // Narrow view: every ray crosses the full box depth of 2.
    for (double v : img.values()) EXPECT_NEAR(v, 1 - std::exp(-5.0 * 2.0), 1e-3);
}

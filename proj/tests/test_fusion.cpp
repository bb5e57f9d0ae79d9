#include <gtest/gtest.h>

#include "coordx/model.hpp"
#include "support/reference.hpp"

using namespace coordx;

namespace {

std::vector<Tensor<double>> random_features(const Shape& rows, std::size_t width, Rng& rng) {
    std::vector<Tensor<double>> f;
    for (auto b : rows) {
        Tensor<double> t({b, width});
        for (auto& v : t.values()) v = rng.uniform(-1, 1);
        f.push_back(std::move(t));
    }
    return f;
}

// Reference fusion of every lattice point, first branch slowest.
Tensor<double> ref_fuse_lattice(const std::vector<Tensor<double>>& f, Fusion mode, std::size_t r) {
    Shape rows;
    for (const auto& t : f) rows.push_back(t.rows());
    const std::size_t n = shape_product(rows);
    Tensor<double> out;
    for (std::size_t p = 0; p < n; ++p) {
        std::vector<std::vector<double>> pt;
        std::size_t rem = p;
        std::vector<std::size_t> idx(f.size());
        for (std::size_t i = f.size(); i-- > 0;) {
            idx[i] = rem % rows[i];
            rem /= rows[i];
        }
        for (std::size_t i = 0; i < f.size(); ++i) pt.emplace_back(f[i].row(idx[i]), f[i].row(idx[i]) + f[i].cols());
        auto v = ref::fuse(pt, mode, r);
        if (p == 0) out = Tensor<double>({n, v.size()});
        std::copy(v.begin(), v.end(), out.row(p));
    }
    return out;
}

}  // namespace

TEST(Fusion, ProductHandExampleWithReduction) {
    // Two branches, one row each, width 4 = R 2 x S 2.
    std::vector<Tensor<double>> f{Tensor<double>({1, 4}, {1, 2, 3, 4}), Tensor<double>({1, 4}, {5, 6, 7, 8})};
    auto out = fuse(f, Fusion::product, 2);
    EXPECT_EQ(out.shape(), (Shape{1, 1, 2}));
    EXPECT_EQ(out.data()[0], 1 * 5 + 3 * 7);
    EXPECT_EQ(out.data()[1], 2 * 6 + 4 * 8);
    auto sum = fuse(f, Fusion::sum, 2);
    EXPECT_EQ(sum.data()[0], 1 + 5 + 3 + 7);
    auto cat = fuse(f, Fusion::concat, 2);
    EXPECT_EQ(cat.shape(), (Shape{1, 1, 4}));
    EXPECT_EQ(cat, Tensor<double>({1, 1, 4}, {4, 6, 12, 14}));
}

TEST(Fusion, AllRoutesAgreeWithReference) {
    Rng rng(1);
    for (int mode = 0; mode < 3; ++mode) {
        for (std::size_t r : {1u, 2u, 3u}) {
            for (const Shape& rows : {Shape{3, 4}, Shape{2, 1, 5}, Shape{1, 1}}) {
                auto f = random_features(rows, 6, rng);
                const auto m = static_cast<Fusion>(mode);
                const auto expect = ref_fuse_lattice(f, m, r);
                EXPECT_EQ(fuse(f, m, r).as_matrix(), expect);
                const std::span<const Tensor<double>> fs(f);
                EXPECT_EQ(fuse_rows(fs, m, r, 0, expect.rows()), expect);
                if (expect.rows() > 2) {
                    auto part = fuse_rows(fs, m, r, 1, 2);
                    for (std::size_t j = 0; j < part.cols(); ++j) EXPECT_EQ(part(1, j), expect(2, j));
                }
            }
        }
    }
}

TEST(Fusion, AlignedFusesRowByRow) {
    Rng rng(2);
    auto f = random_features({4, 4}, 6, rng);
    auto out = fuse_aligned(std::span<const Tensor<double>>(f), Fusion::product, 2);
    ASSERT_EQ(out.shape(), (Shape{4, 3}));
    for (std::size_t p = 0; p < 4; ++p) {
        auto v = ref::fuse<double>({{f[0].row(p), f[0].row(p) + 6}, {f[1].row(p), f[1].row(p) + 6}}, Fusion::product, 2);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out(p, j), v[j]);
    }
}

TEST(Fusion, RejectsMismatchedWidths) {
    std::vector<Tensor<double>> f{Tensor<double>({2, 4}), Tensor<double>({2, 6})};
    EXPECT_THROW(fuse(f, Fusion::product, 1), DimensionError);
    std::vector<Tensor<double>> g{Tensor<double>({2, 4}), Tensor<double>({2, 4})};
    EXPECT_THROW(fuse(g, Fusion::product, 3), DimensionError);
}

TEST(Fusion, BackwardMatchesFiniteDifferences) {
    Rng rng(3);
    for (int mode = 0; mode < 3; ++mode) {
        for (std::size_t r : {1u, 2u}) {
            auto f = random_features({2, 3, 2}, 4, rng);
            const auto m = static_cast<Fusion>(mode);
            const std::span<const Tensor<double>> fs(f);
            auto out = fuse_rows(fs, m, r, 0, 12);
            Tensor<double> g(out.shape());
            for (auto& v : g.values()) v = rng.uniform(-1, 1);
            auto grads = fuse_backward(fs, m, r, g);
            // L = <g, fuse(f)>
            auto objective = [&]() {
                auto o = fuse_rows(std::span<const Tensor<double>>(f), m, r, 0, 12);
                double s = 0;
                for (std::size_t i = 0; i < o.size(); ++i) s += o.data()[i] * g.data()[i];
                return s;
            };
            for (std::size_t b = 0; b < f.size(); ++b) {
                for (std::size_t i = 0; i < f[b].size(); ++i) {
                    double& x = f[b].data()[i];
                    const double saved = x, h = 1e-6;
                    x = saved + h;
                    const double up = objective();
                    x = saved - h;
                    const double down = objective();
                    x = saved;
                    EXPECT_NEAR(grads[b].data()[i], (up - down) / (2 * h), 1e-8) << mode << " " << r;
                }
            }
        }
    }
}

TEST(Fusion, ProductBackwardWithZeroFactor) {
    // A zero in one factor must not poison the other branches' gradients.
    std::vector<Tensor<double>> f{Tensor<double>({1, 1}, {0.0}), Tensor<double>({1, 1}, {3.0}),
                                  Tensor<double>({1, 1}, {2.0})};
    Tensor<double> g({1, 1}, {1.0});
    auto grads = fuse_backward(std::span<const Tensor<double>>(f), Fusion::product, 1, g);
    EXPECT_EQ(grads[0].data()[0], 6.0);
    EXPECT_EQ(grads[1].data()[0], 0.0);
    EXPECT_EQ(grads[2].data()[0], 0.0);
}

TEST(LatticeCursor, LastIndexFastest) {
    LatticeCursor c({2, 3});
    std::vector<std::pair<std::size_t, std::size_t>> seen;
    for (int i = 0; i < 6; ++i) {
        seen.emplace_back(c[0], c[1]);
        c.advance();
    }
    EXPECT_EQ(seen.front(), std::make_pair(std::size_t{0}, std::size_t{0}));
    EXPECT_EQ(seen[1], std::make_pair(std::size_t{0}, std::size_t{1}));
    EXPECT_EQ(seen[3], std::make_pair(std::size_t{1}, std::size_t{0}));
}

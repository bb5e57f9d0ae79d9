#include <gtest/gtest.h>

#include <sstream>

#include "coordx/parallel.hpp"
#include "coordx/random.hpp"
#include "coordx/tensor.hpp"
#include "support/reference.hpp"

using namespace coordx;

namespace {

template <class T>
Tensor<T> random_tensor(Shape shape, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-1, 1));
    return t;
}

}  // namespace

TEST(Tensor, RejectsZeroExtentsAndWrongDataLength) {
    EXPECT_THROW(Tensor<double>({2, 0}), DimensionError);
    EXPECT_THROW(Tensor<double>(Shape{}), DimensionError);
    EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, RowsCollapseLeadingAxes) {
    Tensor<double> t({2, 3, 4});
    EXPECT_EQ(t.rows(), 6u);
    EXPECT_EQ(t.cols(), 4u);
    EXPECT_EQ(t.size(), 24u);
    EXPECT_EQ(t.as_matrix().shape(), (Shape{6, 4}));
    EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
}

TEST(Tensor, MatmulHandExample) {
    auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
    auto b = Tensor<double>::matrix({{5, 6}, {7, 8}});
    auto c = matmul(a, b);
    EXPECT_EQ(c, Tensor<double>::matrix({{19, 22}, {43, 50}}));
    EXPECT_EQ(matmul(a, Tensor<double>::identity(2)), a);
    EXPECT_THROW(matmul(a, Tensor<double>({3, 2})), DimensionError);
}

TEST(Tensor, MatmulMatchesTripleLoopBitwise) {
    Rng rng(7);
    // Sizes straddle the register-block edges in both dimensions.
    for (auto [n, k, m] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 7}, {4, 16, 16}, {9, 33, 17},
                                                                   {65, 12, 70}, {300, 20, 40}}) {
        auto a = random_tensor<double>({n, k}, rng);
        auto b = random_tensor<double>({k, m}, rng);
        EXPECT_EQ(matmul(a, b), ref::matmul(a, b)) << n << "x" << k << "x" << m;
        auto af = a.cast<float>(), bf = b.cast<float>();
        EXPECT_EQ(matmul(af, bf), ref::matmul(af, bf)) << "f32 " << n << "x" << k << "x" << m;
    }
}

TEST(Tensor, MatmulIndependentOfThreadCount) {
    Rng rng(3);
    auto a = random_tensor<double>({2000, 24}, rng);
    auto b = random_tensor<double>({24, 31}, rng);
    Tensor<double> one, many;
    {
        ScopedThreadCount t(1);
        one = matmul(a, b);
    }
    {
        ScopedThreadCount t(4);
        many = matmul(a, b);
    }
    EXPECT_EQ(one, many);
}

TEST(Tensor, TransposeTwiceIsIdentity) {
    Rng rng(1);
    auto a = random_tensor<double>({5, 9}, rng);
    auto t = transpose(a);
    EXPECT_EQ(t.shape(), (Shape{9, 5}));
    EXPECT_EQ(t(2, 4), a(4, 2));
    EXPECT_EQ(transpose(t), a);
}

TEST(Tensor, BroadcastOuterMatchesIndexFormula) {
    Rng rng(11);
    std::vector<Tensor<double>> f{random_tensor<double>({2, 3}, rng), random_tensor<double>({4, 3}, rng),
                                  random_tensor<double>({3, 3}, rng)};
    auto out = broadcast_outer(f);
    ASSERT_EQ(out.shape(), (Shape{2, 4, 3, 3}));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t k = 0; k < 3; ++k)
                for (std::size_t m = 0; m < 3; ++m) {
                    const double expect = f[0](i, m) * f[1](j, m) * f[2](k, m);
                    EXPECT_EQ(out.data()[((i * 4 + j) * 3 + k) * 3 + m], expect);
                }
    EXPECT_THROW(broadcast_outer(std::vector<Tensor<double>>{Tensor<double>({2, 3}), Tensor<double>({2, 4})}),
                 DimensionError);
}

TEST(Tensor, ReduceLastSumsSlowestBlocks) {
    Tensor<double> t({1, 6}, {1, 2, 3, 10, 20, 30});
    auto r = reduce_last(t, 2);
    EXPECT_EQ(r.shape(), (Shape{1, 3}));
    EXPECT_EQ(r, Tensor<double>({1, 3}, {11, 22, 33}));
    EXPECT_EQ(reduce_last(t, 1), t);
    EXPECT_THROW(reduce_last(t, 4), DimensionError);
}

TEST(TensorIo, RoundTripIsBitExact) {
    Rng rng(5);
    auto t = random_tensor<double>({3, 4, 5}, rng);
    t.data()[0] = -0.0;
    t.data()[1] = 1e-310;
    std::stringstream ss;
    write_tensor(ss, t);
    auto back = read_tensor<double>(ss);
    EXPECT_EQ(back.shape(), t.shape());
    EXPECT_EQ(std::memcmp(back.data(), t.data(), t.size() * sizeof(double)), 0);
}

TEST(TensorIo, HeaderLayout) {
    std::stringstream ss;
    write_tensor(ss, Tensor<double>({1, 2}, {1.0, -2.0}));
    const std::string s = ss.str();
    ASSERT_EQ(s.size(), 4u + 4u + 8u + 16u);
    EXPECT_EQ(s.substr(0, 4), "CXT1");
    EXPECT_EQ(static_cast<unsigned char>(s[4]), 2);  // ndim, little endian
    EXPECT_EQ(static_cast<unsigned char>(s[8]), 1);
    EXPECT_EQ(static_cast<unsigned char>(s[12]), 2);
    // 1.0 = 0x3FF0000000000000 little endian
    EXPECT_EQ(static_cast<unsigned char>(s[16 + 7]), 0x3F);
    EXPECT_EQ(static_cast<unsigned char>(s[16 + 6]), 0xF0);
}

TEST(TensorIo, RejectsCorruptInput) {
    std::stringstream bad_magic("XXXX");
    EXPECT_THROW(read_tensor<double>(bad_magic), ParseError);
    std::stringstream ss;
    write_tensor(ss, Tensor<double>({2, 2}, 1.0));
    std::string truncated = ss.str().substr(0, ss.str().size() - 3);
    std::stringstream tr(truncated);
    EXPECT_THROW(read_tensor<double>(tr), ParseError);
    std::string zero_extent = ss.str();
    zero_extent[8] = 0;
    std::stringstream ze(zero_extent);
    EXPECT_THROW(read_tensor<double>(ze), ParseError);
    // ParseError is an IoError for exit-code mapping.
    EXPECT_THROW(throw ParseError("x"), IoError);
}

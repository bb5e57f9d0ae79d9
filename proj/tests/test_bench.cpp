#include <gtest/gtest.h>

#include <sstream>

#include "coordx/bench.hpp"
#include "support/reference.hpp"

using namespace coordx;

namespace {

std::pair<ModelSpec, ModelSpec> bench_pair(int d_f) {
    ModelSpec base;
    base.k = 2;
    base.o = 1;
    base.m = 8;
    base.depth = 5;
    ModelSpec split = base;
    split.split = SplitSpec{{1, 1}, 5 - d_f, d_f, 1, Augment::none, Fusion::product};
    return {base, split};
}

}  // namespace

TEST(Gamma, FormulaValues) {
    // D_s = 3, D_f = 2, C = 2, B = 512: 2.5 / (1.5 * 2 / 512 + 1)
    EXPECT_NEAR(*gamma_theoretical(3, 2, 2, 512), 2.5 / (3.0 / 512 + 1), 1e-15);
    EXPECT_NEAR(*gamma_theoretical(3, 2, 2, 512), 2.48544, 1e-5);
    EXPECT_DOUBLE_EQ(*gamma_bound(3, 2), 2.5);
    EXPECT_FALSE(gamma_theoretical(5, 0, 2, 64).has_value());
    EXPECT_FALSE(gamma_bound(5, 0).has_value());
    // B = 1 means no sharing: gamma = (lambda + 1) / (lambda C + 1) < 1.
    EXPECT_LT(*gamma_theoretical(3, 2, 2, 1), 1.0);
}

TEST(Gamma, ApproachesBoundFromBelow) {
    double prev = 0;
    for (double b : {4.0, 16.0, 64.0, 256.0, 1024.0, 1e6}) {
        const double g = *gamma_theoretical(3, 2, 3, b);
        EXPECT_GT(g, prev);
        EXPECT_LT(g, 2.5);
        prev = g;
    }
    EXPECT_NEAR(prev, 2.5, 1e-9);
}

TEST(Gamma, MatchesOpCountOracle) {
    for (int c : {2, 3})
        for (int d_f : {1, 2, 3})
            for (double b : {16.0, 64.0, 256.0, 1024.0})
                EXPECT_NEAR(*gamma_theoretical(5 - d_f, d_f, c, b), ref::gamma_from_counts(5 - d_f, d_f, c, b),
                            1e-12 * 2.5);
}

TEST(Bench, RecordsAreConsistent) {
    auto [base, split] = bench_pair(2);
    BenchOptions opt;
    opt.warmup = 0;
    auto recs = run_bench<float>(base, split, {{1, 1}, {16, 16}, {40, 40}}, opt);
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[1].label, "16x16");
    EXPECT_EQ(recs[1].points, 256u);
    for (const auto& r : recs) {
        EXPECT_TRUE(r.ma_matches_gamma()) << r.label << " " << r.ma_ratio_uniform << " " << r.predicted_gamma;
        EXPECT_EQ(r.threads, 1);
        EXPECT_EQ(r.precision, "f32");
        EXPECT_EQ(r.trials, 5);
        EXPECT_GT(r.t_baseline_ms, 0.0);
    }
    EXPECT_TRUE(recs[0].overhead_dominated);
    EXPECT_TRUE(recs[1].overhead_dominated);  // N < 1024
    EXPECT_LT(recs[0].ma_ratio, 1.0);
    EXPECT_GT(recs[2].ma_ratio, 1.5);
}

TEST(Bench, Validation) {
    auto [base, split] = bench_pair(2);
    BenchOptions few;
    few.trials = 4;
    EXPECT_THROW(run_bench<float>(base, split, {{4, 4}}, few), ConfigError);
    EXPECT_THROW(run_bench<float>(split, base, {{4, 4}}), ConfigError);
    EXPECT_THROW(run_bench<float>(base, split, {{4, 4, 4}}), ConfigError);
    auto wide = split;
    wide.m = 16;
    EXPECT_THROW(run_bench<float>(base, wide, {{4, 4}}), ConfigError);
}

TEST(Bench, RobustStatistics) {
    EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
    EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
    EXPECT_DOUBLE_EQ(median_abs_deviation({1, 2, 3, 4, 100}), 1.0);
}

TEST(Bench, CsvHeaderAndRow) {
    BenchRecord r;
    r.label = "8x8";
    r.points = 64;
    r.t_baseline_ms = 2;
    r.t_coordx_ms = 1;
    r.precision = "f64";
    std::ostringstream os;
    write_bench_csv(os, {r});
    const auto s = os.str();
    EXPECT_EQ(s.substr(0, s.find('\n')),
              "extent,N,predicted_gamma,ma_ratio,t_baseline_ms,t_coordx_ms,ratio,ma_ratio_uniform,mad_baseline_ms,"
              "mad_coordx_ms,trials,threads,precision,overhead_dominated");
    EXPECT_NE(s.find("8x8,64,0,0,2,1,2,"), std::string::npos);
}

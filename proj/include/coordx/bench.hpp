#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "coordx/grid.hpp"
#include "coordx/model.hpp"
#include "coordx/parallel.hpp"
#include "coordx/random.hpp"

namespace coordx {

/// Analytic ratio of baseline to split-model FC work on a B^C lattice
/// when every layer costs the same per row:
///   gamma = (lambda + 1) / (lambda C B^(1-C) + 1),  lambda = D_s / D_f.
/// Undefined (nullopt) for D_f = 0; compare raw op counts instead.
inline std::optional<double> gamma_theoretical(int d_s, int d_f, int c, double b) {
    if (d_f <= 0) return std::nullopt;
    const double lambda = static_cast<double>(d_s) / static_cast<double>(d_f);
    return (lambda + 1.0) / (lambda * static_cast<double>(c) * std::pow(b, 1.0 - static_cast<double>(c)) + 1.0);
}

/// The B -> infinity limit, lambda + 1.
inline std::optional<double> gamma_bound(int d_s, int d_f) {
    if (d_f <= 0) return std::nullopt;
    return static_cast<double>(d_s) / static_cast<double>(d_f) + 1.0;
}

struct BenchRecord {
    std::string label;       // e.g. "128x128"
    Shape extents;           // per-axis lattice extents
    std::size_t points = 0;  // N
    double predicted_gamma = 0.0;
    double ma_ratio = 0.0;          // exact multiply-add ratio, actual layer widths
    double ma_ratio_uniform = 0.0;  // multiply-add ratio with every layer costed M x M
    double t_baseline_ms = 0.0;     // median over trials
    double t_coordx_ms = 0.0;
    double mad_baseline_ms = 0.0;
    double mad_coordx_ms = 0.0;
    int trials = 0;
    int threads = 1;
    std::string precision;
    bool overhead_dominated = false;

    double wall_ratio() const { return t_coordx_ms > 0 ? t_baseline_ms / t_coordx_ms : 0.0; }

    /// Uniform-width op ratio reproduces the analytic gamma.
    bool ma_matches_gamma(double tol = 1e-12) const {
        return std::abs(ma_ratio_uniform - predicted_gamma) <= tol * std::max(1.0, predicted_gamma);
    }
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_abs_deviation(const std::vector<double>& v) {
    const double m = median(v);
    std::vector<double> d;
    for (double x : v) d.push_back(std::abs(x - m));
    return median(std::move(d));
}

struct BenchOptions {
    int trials = 5;
    int warmup = 2;
    std::uint64_t seed = 0;
};

template <class T>
inline constexpr const char* precision_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

/// Times baseline and split inference over each lattice (warmup passes
/// discarded) on a single thread and pairs the measurements with exact
/// multiply-add counts and the analytic gamma.
template <class T = float>
std::vector<BenchRecord> run_bench(const ModelSpec& baseline, const ModelSpec& coordx,
                                   const std::vector<Shape>& extents_list, const BenchOptions& opts = {}) {
    baseline.validate();
    coordx.validate();
    if (baseline.is_split() || !coordx.is_split()) throw ConfigError("bench: need one baseline and one split spec");
    if (baseline.k != coordx.k || baseline.o != coordx.o || baseline.m != coordx.m || baseline.depth != coordx.depth) {
        throw ConfigError("bench: specs must share k, o, hidden width and depth");
    }
    if (opts.trials < 5) throw ConfigError("bench: at least 5 trials required");
    if (opts.warmup < 0) throw ConfigError("bench: warmup must be >= 0");

    ScopedThreadCount single(1);
    Rng rng(opts.seed);
    Rng base_rng = rng.split(1), split_rng = rng.split(2);
    const auto base_params = init_params<T>(baseline, base_rng);
    const auto split_params = init_params<T>(coordx, split_rng);
    const auto& s = *coordx.split;
    using clock = std::chrono::steady_clock;

    std::vector<BenchRecord> records;
    for (const auto& extents : extents_list) {
        if (extents.size() != static_cast<std::size_t>(baseline.k)) throw ConfigError("bench: extent rank must equal k");
        const CoordGrid grid = make_grid(extents, {}, s.branch_sizes);
        const DecomposedGrid dg = decompose(grid);
        const Tensor<double> points = recompose(dg);
        const Shape rows = dg.branch_rows();

        BenchRecord rec;
        rec.extents = extents;
        for (std::size_t i = 0; i < extents.size(); ++i) rec.label += (i ? "x" : "") + std::to_string(extents[i]);
        rec.points = points.rows();
        const double b = std::pow(static_cast<double>(rec.points), 1.0 / static_cast<double>(rows.size()));
        rec.predicted_gamma = gamma_theoretical(s.d_s, s.d_f, static_cast<int>(rows.size()), b).value_or(0.0);
        const auto base_ops = count_fc_ops(baseline, {rec.points});
        const auto split_ops = count_fc_ops(coordx, rows);
        rec.ma_ratio = static_cast<double>(base_ops.multiply_adds) / static_cast<double>(split_ops.multiply_adds);
        rec.ma_ratio_uniform = static_cast<double>(count_fc_ops(baseline, {rec.points}, true).multiply_adds) /
                               static_cast<double>(count_fc_ops(coordx, rows, true).multiply_adds);

        std::vector<double> tb, tc;
        for (int t = 0; t < opts.warmup + opts.trials; ++t) {
            auto t0 = clock::now();
            auto out_b = forward_baseline(base_params, points);
            auto t1 = clock::now();
            auto out_c = forward_coordx(split_params, dg);
            auto t2 = clock::now();
            if (out_b.size() != out_c.size()) throw DimensionError("bench: output sizes differ");
            if (t >= opts.warmup) {
                tb.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                tc.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
            }
        }
        rec.t_baseline_ms = median(tb);
        rec.t_coordx_ms = median(tc);
        rec.mad_baseline_ms = median_abs_deviation(tb);
        rec.mad_coordx_ms = median_abs_deviation(tc);
        rec.trials = opts.trials;
        rec.threads = num_threads();
        rec.precision = precision_name<T>();
        rec.overhead_dominated = rec.points < 1024 || rec.wall_ratio() <= 1.0;
        records.push_back(std::move(rec));
    }
    return records;
}

/// Required columns first, diagnostics after.
inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records) {
    os << "extent,N,predicted_gamma,ma_ratio,t_baseline_ms,t_coordx_ms,ratio,"
          "ma_ratio_uniform,mad_baseline_ms,mad_coordx_ms,trials,threads,precision,overhead_dominated\n";
    os.precision(15);
    for (const auto& r : records) {
        os << r.label << "," << r.points << "," << r.predicted_gamma << "," << r.ma_ratio << "," << r.t_baseline_ms << ","
           << r.t_coordx_ms << "," << r.wall_ratio() << "," << r.ma_ratio_uniform << "," << r.mad_baseline_ms << ","
           << r.mad_coordx_ms << "," << r.trials << "," << r.threads << "," << r.precision << ","
           << (r.overhead_dominated ? 1 : 0) << "\n";
    }
}

}  // namespace coordx

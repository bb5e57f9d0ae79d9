#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "coordx/errors.hpp"
#include "coordx/grid.hpp"
#include "coordx/random.hpp"

namespace coordx {

/// Per-branch sample counts for decomposable training batches. Each branch
/// draws about mu * S_i positions, mu = (N / V)^(1/C) with V = prod S_i,
/// so the Cartesian product of the draws holds about N points.
struct SamplePlan {
    std::size_t target_n = 0;
    std::vector<std::size_t> dims;             // S_i
    double mu = 1.0;
    std::vector<std::size_t> per_axis_counts;  // nominal round(mu * S_i), clamped to [1, S_i]
    bool continuous = false;
    bool noise = true;  // +-1 jitter per axis on every draw

    std::size_t branches() const { return dims.size(); }

    std::size_t nominal_points() const {
        std::size_t n = 1;
        for (auto c : per_axis_counts) n *= c;
        return n;
    }
};

inline SamplePlan plan(std::size_t target_n, const std::vector<std::size_t>& dims, bool continuous = false) {
    if (target_n < 1) throw ConfigError("sampler: target point count must be >= 1");
    if (dims.empty()) throw ConfigError("sampler: no dimensions");
    double volume = 1.0;
    std::size_t lattice = 1;
    for (auto s : dims) {
        if (s == 0) throw ConfigError("sampler: zero-length dimension");
        volume *= static_cast<double>(s);
        lattice *= s;
    }
    if (!continuous && target_n > lattice) {
        throw ConfigError("sampler: budget of " + std::to_string(target_n) + " points exceeds the lattice size " +
                          std::to_string(lattice));
    }
    SamplePlan p;
    p.target_n = target_n;
    p.dims = dims;
    p.continuous = continuous;
    p.mu = std::pow(static_cast<double>(target_n) / volume, 1.0 / static_cast<double>(dims.size()));
    for (auto s : dims) {
        auto c = static_cast<long long>(std::llround(p.mu * static_cast<double>(s)));
        p.per_axis_counts.push_back(static_cast<std::size_t>(std::clamp<long long>(c, 1, static_cast<long long>(s))));
    }
    // Asking for the whole lattice means exactly the whole lattice.
    p.noise = continuous || target_n != lattice;
    return p;
}

/// One decomposable batch: the sampled per-branch positions and, for
/// discrete plans, their indices into each branch's canonical rows.
struct SampledBatch {
    DecomposedGrid grid;
    std::vector<std::vector<std::size_t>> indices;  // empty in continuous mode

    std::size_t point_count() const { return grid.point_count(); }
};

/// Counts actually drawn for one batch: nominal counts plus uniform
/// integer noise in {-1, 0, +1}, clamped to [1, S_i].
inline std::vector<std::size_t> draw_counts(const SamplePlan& p, Rng& rng) {
    std::vector<std::size_t> counts = p.per_axis_counts;
    if (!p.noise) return counts;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        long long c = static_cast<long long>(counts[i]) + static_cast<long long>(rng.below(3)) - 1;
        counts[i] = static_cast<std::size_t>(std::clamp<long long>(c, 1, static_cast<long long>(p.dims[i])));
    }
    return counts;
}

/// Distinct indices from [0, s), ascending (partial Fisher-Yates).
inline std::vector<std::size_t> choose_without_replacement(std::size_t s, std::size_t count, Rng& rng) {
    std::vector<std::size_t> pool(s);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(s - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// Draws one batch. Discrete plans pick rows of `canonical` (the
/// decomposed full-resolution grid) without replacement; continuous plans
/// draw uniform positions inside each axis' [min, max] range. The batch is
/// always the full Cartesian product of the per-branch picks.
inline SampledBatch sample(const SamplePlan& p, const DecomposedGrid& canonical, Rng& rng) {
    if (canonical.branches.size() != p.dims.size()) throw ConfigError("sampler: plan/grid branch count mismatch");
    for (std::size_t i = 0; i < p.dims.size(); ++i) {
        if (canonical.branches[i].rows() != p.dims[i]) throw ConfigError("sampler: plan/grid extent mismatch");
    }
    SampledBatch batch;
    const auto counts = draw_counts(p, rng);
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& rows = canonical.branches[i];
        if (p.continuous) {
            Tensor<double> t({counts[i], rows.cols()});
            for (std::size_t c = 0; c < rows.cols(); ++c) {
                double lo = rows(0, c), hi = rows(0, c);
                for (std::size_t r = 0; r < rows.rows(); ++r) {
                    lo = std::min(lo, rows(r, c));
                    hi = std::max(hi, rows(r, c));
                }
                for (std::size_t r = 0; r < counts[i]; ++r) t(r, c) = rng.uniform(lo, hi);
            }
            batch.grid.branches.push_back(std::move(t));
        } else {
            auto idx = choose_without_replacement(p.dims[i], counts[i], rng);
            Tensor<double> t({idx.size(), rows.cols()});
            for (std::size_t r = 0; r < idx.size(); ++r) {
                std::copy(rows.row(idx[r]), rows.row(idx[r]) + rows.cols(), t.row(r));
            }
            batch.grid.branches.push_back(std::move(t));
            batch.indices.push_back(std::move(idx));
        }
    }
    return batch;
}

/// True when the point set (N x K, branch columns contiguous per
/// `branch_sizes`) is exactly the Cartesian product of its per-branch
/// marginals, i.e. it can be fed to a split model without gaps.
inline bool is_decomposable(const Tensor<double>& points, const std::vector<std::size_t>& branch_sizes) {
    const std::size_t n = points.rows();
    std::vector<std::vector<std::vector<double>>> marginals(branch_sizes.size());
    std::vector<std::vector<double>> keys(n);
    std::size_t col = 0;
    for (std::size_t b = 0; b < branch_sizes.size(); ++b) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < n; ++i) {
            rows.emplace_back(points.row(i) + col, points.row(i) + col + branch_sizes[b]);
        }
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        marginals[b] = std::move(rows);
        col += branch_sizes[b];
    }
    std::size_t product = 1;
    for (const auto& m : marginals) product *= m.size();
    if (product != n) return false;
    for (std::size_t i = 0; i < n; ++i) keys[i].assign(points.row(i), points.row(i) + points.cols());
    std::sort(keys.begin(), keys.end());
    return std::adjacent_find(keys.begin(), keys.end()) == keys.end();
}

}  // namespace coordx

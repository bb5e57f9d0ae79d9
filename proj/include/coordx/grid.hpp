#pragma once

#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "coordx/errors.hpp"
#include "coordx/tensor.hpp"

namespace coordx {

/// Cartesian lattice over K coordinate axes. Points enumerate
/// lexicographically with axis 0 slowest. `branch_sizes` partitions the
/// axes into C contiguous groups of K_i axes each.
struct CoordGrid {
    std::vector<std::vector<double>> axes;
    std::vector<std::size_t> branch_sizes;

    std::size_t dims() const { return axes.size(); }
    std::size_t branches() const { return branch_sizes.size(); }

    std::size_t point_count() const {
        std::size_t n = 1;
        for (const auto& a : axes) n *= a.size();
        return n;
    }

    Shape extents() const {
        Shape e;
        for (const auto& a : axes) e.push_back(a.size());
        return e;
    }

    /// Rows fed to each branch: product of the extents of its axes.
    Shape branch_rows() const {
        Shape rows;
        std::size_t axis = 0;
        for (auto k : branch_sizes) {
            std::size_t b = 1;
            for (std::size_t j = 0; j < k; ++j) b *= axes[axis + j].size();
            rows.push_back(b);
            axis += k;
        }
        return rows;
    }

    /// Regroups the axes into a new partition; sizes must sum to dims().
    CoordGrid with_branches(std::vector<std::size_t> sizes) const {
        CoordGrid g{axes, std::move(sizes)};
        g.validate();
        return g;
    }

    void validate() const {
        if (axes.empty()) throw ConfigError("grid has no axes");
        for (const auto& a : axes) {
            if (a.empty()) throw ConfigError("grid axis with zero extent");
        }
        std::size_t total = 0;
        for (auto k : branch_sizes) {
            if (k == 0) throw ConfigError("empty branch in branch partition");
            total += k;
        }
        if (total != axes.size()) {
            throw ConfigError("branch partition covers " + std::to_string(total) + " of " +
                              std::to_string(axes.size()) + " axes");
        }
    }
};

/// Per-branch sub-coordinate tables X^(i), each B_i x K_i.
struct DecomposedGrid {
    std::vector<Tensor<double>> branches;

    std::size_t point_count() const {
        std::size_t n = 1;
        for (const auto& b : branches) n *= b.rows();
        return n;
    }

    Shape branch_rows() const {
        Shape rows;
        for (const auto& b : branches) rows.push_back(b.rows());
        return rows;
    }

    std::size_t dims() const {
        std::size_t k = 0;
        for (const auto& b : branches) k += b.cols();
        return k;
    }

    friend bool operator==(const DecomposedGrid&, const DecomposedGrid&) = default;
};

/// Evenly spaced values over [lo, hi] inclusive; a single sample sits at
/// the midpoint.
inline std::vector<double> linspace(std::size_t count, double lo, double hi) {
    if (count == 0) throw ConfigError("linspace: zero extent");
    std::vector<double> v(count);
    if (count == 1) {
        v[0] = 0.5 * (lo + hi);
        return v;
    }
    const double step = (hi - lo) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) v[i] = lo + step * static_cast<double>(i);
    v.back() = hi;
    return v;
}

/// Builds a lattice with one axis per extent. `ranges` may be empty
/// (every axis spans [-1, 1]) or give one [lo, hi] pair per axis. The
/// default partition puts every axis in its own branch.
inline CoordGrid make_grid(const std::vector<std::size_t>& extents,
                           const std::vector<std::pair<double, double>>& ranges = {},
                           std::vector<std::size_t> branch_sizes = {}) {
    if (extents.empty()) throw ConfigError("make_grid: no extents");
    if (!ranges.empty() && ranges.size() != extents.size()) {
        throw ConfigError("make_grid: need one range per axis");
    }
    CoordGrid g;
    for (std::size_t i = 0; i < extents.size(); ++i) {
        if (extents[i] == 0) throw ConfigError("make_grid: zero extent on axis " + std::to_string(i));
        double lo = ranges.empty() ? -1.0 : ranges[i].first;
        double hi = ranges.empty() ? 1.0 : ranges[i].second;
        if (!(lo < hi)) throw ConfigError("make_grid: empty range on axis " + std::to_string(i));
        g.axes.push_back(linspace(extents[i], lo, hi));
    }
    g.branch_sizes = branch_sizes.empty() ? std::vector<std::size_t>(extents.size(), 1)
                                          : std::move(branch_sizes);
    g.validate();
    return g;
}

namespace detail {

// Row-major enumeration of the lattice spanned by axes[first, first+count).
inline Tensor<double> sub_lattice(const std::vector<std::vector<double>>& axes, std::size_t first,
                                  std::size_t count) {
    std::size_t rows = 1;
    for (std::size_t j = 0; j < count; ++j) rows *= axes[first + j].size();
    Tensor<double> t({rows, count});
    std::vector<std::size_t> idx(count, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < count; ++j) t(r, j) = axes[first + j][idx[j]];
        for (std::size_t j = count; j-- > 0;) {
            if (++idx[j] < axes[first + j].size()) break;
            idx[j] = 0;
        }
    }
    return t;
}

}  // namespace detail

inline DecomposedGrid decompose(const CoordGrid& grid) {
    grid.validate();
    DecomposedGrid dg;
    std::size_t axis = 0;
    for (auto k : grid.branch_sizes) {
        dg.branches.push_back(detail::sub_lattice(grid.axes, axis, k));
        axis += k;
    }
    return dg;
}

/// Cartesian product of the branch tables, first branch slowest.
inline Tensor<double> recompose(const DecomposedGrid& dg) {
    if (dg.branches.empty()) throw DimensionError("recompose: no branches");
    const std::size_t n = dg.point_count(), k = dg.dims();
    Tensor<double> out({n, k});
    const std::size_t c = dg.branches.size();
    std::vector<std::size_t> idx(c, 0);
    for (std::size_t p = 0; p < n; ++p) {
        double* dst = out.row(p);
        for (std::size_t i = 0; i < c; ++i) {
            const auto& b = dg.branches[i];
            const double* src = b.row(idx[i]);
            dst = std::copy(src, src + b.cols(), dst);
        }
        for (std::size_t i = c; i-- > 0;) {
            if (++idx[i] < dg.branches[i].rows()) break;
            idx[i] = 0;
        }
    }
    return out;
}

inline Tensor<double> grid_points(const CoordGrid& grid) { return recompose(decompose(grid)); }

}  // namespace coordx

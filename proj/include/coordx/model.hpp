#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coordx/encoders.hpp"
#include "coordx/errors.hpp"
#include "coordx/grid.hpp"
#include "coordx/random.hpp"
#include "coordx/tensor.hpp"

namespace coordx {

enum class Fusion { product, sum, concat };
enum class Augment { none, plus, plusplus };

inline std::string to_string(Fusion f) {
    switch (f) {
        case Fusion::product: return "product";
        case Fusion::sum: return "sum";
        case Fusion::concat: return "concat";
    }
    return "?";
}

inline std::string to_string(Augment a) {
    switch (a) {
        case Augment::none: return "none";
        case Augment::plus: return "plus";
        case Augment::plusplus: return "plusplus";
    }
    return "?";
}

struct SplitSpec {
    std::vector<std::size_t> branch_sizes;  // K_i, contiguous groups of input axes
    int d_s = 3;
    int d_f = 2;
    int r = 1;
    Augment augment = Augment::none;
    Fusion fusion = Fusion::product;

    std::size_t branches() const { return branch_sizes.size(); }

    friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

struct LayerShape {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    bool activated = true;
    bool first = false;  // takes encoded coordinates as input
};

/// Architecture of a coordinate MLP. Without `split` it is the plain
/// baseline: D fully connected layers with activations on all but the
/// last. With `split` the first D_s layers run per branch (the first one
/// with a separate weight per branch, the rest shared), branch features
/// are fused, and D_f tail layers map the fused features to outputs.
struct ModelSpec {
    int k = 2;
    int o = 1;
    int m = 64;
    int depth = 5;
    EncodingSpec encoding{};
    ActivationSpec activation{};
    std::optional<SplitSpec> split{};

    bool is_split() const { return split.has_value(); }
    std::size_t branches() const { return split ? split->branches() : 1; }

    /// Width of the pre-fusion layer j (0-based) of a split model.
    std::size_t pre_width(int j) const {
        const auto& s = *split;
        const std::size_t width = static_cast<std::size_t>(m);
        const std::size_t r = static_cast<std::size_t>(s.r);
        if (j == s.d_s - 1) {
            if (s.d_f == 0) return r * static_cast<std::size_t>(o);
            return s.augment == Augment::none ? width : r * width;
        }
        return s.augment == Augment::plusplus ? r * width : width;
    }

    /// Per-branch feature width after the reduction over R (S).
    std::size_t fused_slice() const { return pre_width(split->d_s - 1) / static_cast<std::size_t>(split->r); }

    /// Width of the fused feature consumed by the first tail layer.
    std::size_t fused_width() const {
        std::size_t s = fused_slice();
        return split->fusion == Fusion::concat ? s * branches() : s;
    }

    std::vector<LayerShape> first_layers() const {
        std::vector<LayerShape> out;
        if (!split) {
            bool last = depth == 1;
            out.push_back({encoding.width(static_cast<std::size_t>(k)),
                           last ? static_cast<std::size_t>(o) : static_cast<std::size_t>(m), !last, true});
            return out;
        }
        bool act = !(split->d_s == 1 && split->d_f == 0);
        for (auto ki : split->branch_sizes) out.push_back({encoding.width(ki), pre_width(0), act, true});
        return out;
    }

    std::vector<LayerShape> trunk_layers() const {
        std::vector<LayerShape> out;
        if (!split) {
            for (int l = 1; l < depth; ++l) {
                bool last = l == depth - 1;
                out.push_back({static_cast<std::size_t>(m),
                               last ? static_cast<std::size_t>(o) : static_cast<std::size_t>(m), !last, false});
            }
            return out;
        }
        for (int j = 1; j < split->d_s; ++j) {
            bool act = !(j == split->d_s - 1 && split->d_f == 0);
            out.push_back({pre_width(j - 1), pre_width(j), act, false});
        }
        return out;
    }

    std::vector<LayerShape> tail_layers() const {
        std::vector<LayerShape> out;
        if (!split) return out;
        for (int t = 0; t < split->d_f; ++t) {
            bool last = t == split->d_f - 1;
            out.push_back({t == 0 ? fused_width() : static_cast<std::size_t>(m),
                           last ? static_cast<std::size_t>(o) : static_cast<std::size_t>(m), !last, false});
        }
        return out;
    }

    void validate() const {
        if (k < 1 || o < 1 || m < 1 || depth < 1) throw ConfigError("model: k, o, hidden width and depth must be >= 1");
        encoding.validate();
        if (activation.kind == ActivationKind::sine && !(activation.omega0 > 0)) {
            throw ConfigError("model: omega0 must be positive");
        }
        if (!split) return;
        const auto& s = *split;
        if (s.branch_sizes.empty()) throw ConfigError("split: no branches");
        std::size_t total = 0;
        for (auto ki : s.branch_sizes) {
            if (ki == 0) throw ConfigError("split: empty branch");
            total += ki;
        }
        if (total != static_cast<std::size_t>(k)) {
            throw ConfigError("split: branch sizes sum to " + std::to_string(total) + ", model k is " +
                              std::to_string(k));
        }
        if (s.d_s < 1) throw ConfigError("split: d_s must be >= 1");
        if (s.d_f < 0) throw ConfigError("split: d_f must be >= 0");
        if (s.d_s + s.d_f != depth) throw ConfigError("split: d_s + d_f must equal depth");
        if (s.r < 1) throw ConfigError("split: r must be >= 1");
        if (s.fusion == Fusion::concat && s.d_f == 0) {
            throw ConfigError("split: concat fusion needs at least one layer after fusion (d_f >= 1)");
        }
        if (pre_width(s.d_s - 1) % static_cast<std::size_t>(s.r) != 0) {
            throw ConfigError("split: pre-fusion width " + std::to_string(pre_width(s.d_s - 1)) +
                              " not divisible by r=" + std::to_string(s.r));
        }
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Fully connected layer, y = x W + b with W stored fan_in x fan_out.
template <class T>
struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;

    friend bool operator==(const Linear&, const Linear&) = default;
};

/// Weights in checkpoint order: per-branch first layers, shared trunk,
/// tail. A baseline model has a single first layer and keeps its other
/// layers in `trunk`.
template <class T>
struct ModelParams {
    ModelSpec spec;
    std::vector<Linear<T>> first;
    std::vector<Linear<T>> trunk;
    std::vector<Linear<T>> tail;

    template <class Fn>
    void for_each_tensor(Fn&& fn) {
        for (auto* group : {&first, &trunk, &tail}) {
            for (auto& layer : *group) {
                fn(layer.weight);
                fn(layer.bias);
            }
        }
    }

    template <class Fn>
    void for_each_tensor(Fn&& fn) const {
        for (const auto* group : {&first, &trunk, &tail}) {
            for (const auto& layer : *group) {
                fn(layer.weight);
                fn(layer.bias);
            }
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_tensor([&](const Tensor<T>& t) { n += t.size(); });
        return n;
    }

    std::size_t weight_count() const {
        std::size_t n = 0;
        for (const auto* group : {&first, &trunk, &tail}) {
            for (const auto& layer : *group) n += layer.weight.size();
        }
        return n;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

    /// Same structure, all values zero.
    ModelParams zeros_like() const {
        ModelParams z = *this;
        z.for_each_tensor([](Tensor<T>& t) { t.fill(T(0)); });
        return z;
    }

    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out{spec, {}, {}, {}};
        auto copy = [](const std::vector<Linear<T>>& src, std::vector<Linear<U>>& dst) {
            for (const auto& l : src) dst.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
        };
        copy(first, out.first);
        copy(trunk, out.trunk);
        copy(tail, out.tail);
        return out;
    }
};

namespace detail {

template <class T>
Linear<T> init_linear(const LayerShape& shape, const ActivationSpec& act, Rng& rng) {
    Linear<T> layer;
    const double bias_bound = 1.0 / std::sqrt(static_cast<double>(shape.fan_in));
    if (act.kind == ActivationKind::sine) {
        layer.weight = transpose(siren_init<T>(rng, shape.fan_in, shape.fan_out, shape.first, act.omega0));
    } else {
        layer.weight = Tensor<T>({shape.fan_in, shape.fan_out});
        const double bound = std::sqrt(6.0 / static_cast<double>(shape.fan_in));
        for (auto& v : layer.weight.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    layer.bias = Tensor<T>({shape.fan_out});
    for (auto& v : layer.bias.values()) v = static_cast<T>(rng.uniform(-bias_bound, bias_bound));
    return layer;
}

}  // namespace detail

/// Random initialisation; sine networks use the SIREN scheme, ReLU
/// networks He-uniform weights. Biases are U(+-1/sqrt(fan_in)).
template <class T = double>
ModelParams<T> init_params(const ModelSpec& spec, Rng& rng) {
    spec.validate();
    ModelParams<T> p{spec, {}, {}, {}};
    for (const auto& s : spec.first_layers()) p.first.push_back(detail::init_linear<T>(s, spec.activation, rng));
    for (const auto& s : spec.trunk_layers()) p.trunk.push_back(detail::init_linear<T>(s, spec.activation, rng));
    for (const auto& s : spec.tail_layers()) p.tail.push_back(detail::init_linear<T>(s, spec.activation, rng));
    return p;
}

// ---------------------------------------------------------------------------
// Layer kernels

template <class T>
Tensor<T> linear_forward(const Linear<T>& layer, const Tensor<T>& x) {
    if (x.cols() != layer.weight.rows()) {
        throw ConfigError("layer expects width " + std::to_string(layer.weight.rows()) + ", got " +
                          std::to_string(x.cols()));
    }
    Tensor<T> z = matmul(x, layer.weight);
    const T* b = layer.bias.data();
    const std::size_t n = z.cols();
    for (std::size_t i = 0; i < z.rows(); ++i) {
        T* row = z.row(i);
        for (std::size_t j = 0; j < n; ++j) row[j] += b[j];
    }
    return z;
}

/// sin(omega0 z) for sine networks (every sine layer), max(z, 0) for ReLU.
template <class T>
void activate_inplace(Tensor<T>& z, const ActivationSpec& act) {
    if (act.kind == ActivationKind::sine) {
        const T w = static_cast<T>(act.omega0);
        for (auto& v : z.values()) v = std::sin(w * v);
    } else {
        for (auto& v : z.values()) v = v > T(0) ? v : T(0);
    }
}

/// grad *= d act / d z, evaluated at pre-activation z.
template <class T>
void activation_backward_inplace(Tensor<T>& grad, const Tensor<T>& z, const ActivationSpec& act) {
    auto g = grad.values();
    auto zz = z.values();
    if (act.kind == ActivationKind::sine) {
        const T w = static_cast<T>(act.omega0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= w * std::cos(w * zz[i]);
    } else {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(zz[i] > T(0))) g[i] = T(0);
        }
    }
}

template <class T>
Tensor<T> apply_layer(const Linear<T>& layer, const Tensor<T>& x, bool activated, const ActivationSpec& act) {
    Tensor<T> z = linear_forward(layer, x);
    if (activated) activate_inplace(z, act);
    return z;
}

// ---------------------------------------------------------------------------
// Fusion

/// Mixed-radix cursor over the lattice B_1 x ... x B_C, last index fastest.
class LatticeCursor {
public:
    explicit LatticeCursor(Shape extents, std::size_t start = 0)
        : extents_(std::move(extents)), index_(extents_.size(), 0) {
        for (std::size_t i = extents_.size(); i-- > 0;) {
            index_[i] = start % extents_[i];
            start /= extents_[i];
        }
    }
    const std::vector<std::size_t>& index() const { return index_; }
    std::size_t operator[](std::size_t i) const { return index_[i]; }
    void advance() {
        for (std::size_t i = extents_.size(); i-- > 0;) {
            if (++index_[i] < extents_[i]) return;
            index_[i] = 0;
        }
    }

private:
    Shape extents_;
    std::vector<std::size_t> index_;
};

namespace detail {

template <class T>
void check_fusion_inputs(std::span<const Tensor<T>> features, std::size_t r) {
    if (features.empty()) throw DimensionError("fuse: no branch features");
    const std::size_t width = features.front().cols();
    for (const auto& f : features) {
        if (f.cols() != width) throw DimensionError("fuse: branch feature widths differ");
    }
    if (r == 0 || width % r != 0) {
        throw DimensionError("fuse: width " + std::to_string(width) + " not divisible by r=" + std::to_string(r));
    }
}

template <class T>
std::size_t fused_width(std::span<const Tensor<T>> features, Fusion mode, std::size_t r) {
    const std::size_t s = features.front().cols() / r;
    return mode == Fusion::concat ? s * features.size() : s;
}

// Fused feature of one lattice point; rows[i] points at branch i's row.
template <class T>
void fuse_point(const std::vector<const T*>& rows, Fusion mode, std::size_t r, std::size_t s, T* dst) {
    const std::size_t c = rows.size();
    switch (mode) {
        case Fusion::product:
            for (std::size_t j = 0; j < s; ++j) {
                T acc = T(0);
                for (std::size_t q = 0; q < r; ++q) {
                    T prod = rows[0][q * s + j];
                    for (std::size_t i = 1; i < c; ++i) prod *= rows[i][q * s + j];
                    acc = q == 0 ? prod : acc + prod;
                }
                dst[j] = acc;
            }
            break;
        case Fusion::sum:
            for (std::size_t j = 0; j < s; ++j) {
                T acc = T(0);
                for (std::size_t q = 0; q < r; ++q) {
                    T total = rows[0][q * s + j];
                    for (std::size_t i = 1; i < c; ++i) total += rows[i][q * s + j];
                    acc = q == 0 ? total : acc + total;
                }
                dst[j] = acc;
            }
            break;
        case Fusion::concat:
            for (std::size_t i = 0; i < c; ++i) {
                for (std::size_t j = 0; j < s; ++j) {
                    T acc = rows[i][j];
                    for (std::size_t q = 1; q < r; ++q) acc += rows[i][q * s + j];
                    dst[i * s + j] = acc;
                }
            }
            break;
    }
}

}  // namespace detail

/// Fused rows [begin, begin + count) of the lattice B_1 x ... x B_C,
/// written as a count x F matrix. Used by the training and chunked
/// inference paths.
template <class T>
Tensor<T> fuse_rows(std::span<const Tensor<T>> features, Fusion mode, std::size_t r, std::size_t begin,
                    std::size_t count) {
    detail::check_fusion_inputs(features, r);
    const std::size_t s = features.front().cols() / r;
    const std::size_t width = detail::fused_width(features, mode, r);
    Shape extents;
    for (const auto& f : features) extents.push_back(f.rows());
    Tensor<T> out({count, width});
    LatticeCursor cursor(extents, begin);
    std::vector<const T*> rows(features.size());
    for (std::size_t p = 0; p < count; ++p) {
        for (std::size_t i = 0; i < features.size(); ++i) rows[i] = features[i].row(cursor[i]);
        detail::fuse_point(rows, mode, r, s, out.row(p));
        cursor.advance();
    }
    return out;
}

/// Fusion of branch features (each B_i x W) into a B_1 x ... x B_C x F
/// tensor, built from the broadcasting primitives:
/// product = reduce_last(broadcast_outer), sum = reduce_last(broadcast sum),
/// concat = per-branch reduce_last, broadcast, then concatenation (F = C*S).
template <class T>
Tensor<T> fuse(std::span<const Tensor<T>> features, Fusion mode, std::size_t r) {
    detail::check_fusion_inputs(features, r);
    Shape shape;
    for (const auto& f : features) shape.push_back(f.rows());
    const std::size_t n = shape_product(shape);
    const std::size_t width = features.front().cols();
    if (mode == Fusion::product) return reduce_last(broadcast_outer(features), r);

    if (mode == Fusion::sum) {
        Tensor<T> expanded(Shape{n, width});
        LatticeCursor cursor(shape);
        for (std::size_t p = 0; p < n; ++p) {
            T* dst = expanded.row(p);
            const T* first = features[0].row(cursor[0]);
            std::copy(first, first + width, dst);
            for (std::size_t i = 1; i < features.size(); ++i) {
                const T* src = features[i].row(cursor[i]);
                for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
            }
            cursor.advance();
        }
        Shape out_shape = shape;
        out_shape.push_back(width);
        return reduce_last(std::move(expanded).reshaped(out_shape), r);
    }

    std::vector<Tensor<T>> reduced;
    for (const auto& f : features) reduced.push_back(reduce_last(f, r));
    const std::size_t s = width / r;
    Tensor<T> out(Shape{n, s * features.size()});
    LatticeCursor cursor(shape);
    for (std::size_t p = 0; p < n; ++p) {
        T* dst = out.row(p);
        for (std::size_t i = 0; i < reduced.size(); ++i) {
            const T* src = reduced[i].row(cursor[i]);
            dst = std::copy(src, src + s, dst);
        }
        cursor.advance();
    }
    Shape out_shape = shape;
    out_shape.push_back(s * features.size());
    return std::move(out).reshaped(out_shape);
}

template <class T>
Tensor<T> fuse(const std::vector<Tensor<T>>& features, Fusion mode, std::size_t r) {
    return fuse(std::span<const Tensor<T>>(features), mode, r);
}

/// Row-aligned fusion: all branches have N rows and row n of each is
/// combined with row n of the others (no broadcasting). Evaluates a split
/// model at arbitrary, non-lattice points.
template <class T>
Tensor<T> fuse_aligned(std::span<const Tensor<T>> features, Fusion mode, std::size_t r) {
    detail::check_fusion_inputs(features, r);
    const std::size_t n = features.front().rows();
    for (const auto& f : features) {
        if (f.rows() != n) throw DimensionError("fuse_aligned: branch row counts differ");
    }
    const std::size_t s = features.front().cols() / r;
    Tensor<T> out({n, detail::fused_width(features, mode, r)});
    std::vector<const T*> rows(features.size());
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t i = 0; i < features.size(); ++i) rows[i] = features[i].row(p);
        detail::fuse_point(rows, mode, r, s, out.row(p));
    }
    return out;
}

/// Gradients of a lattice fusion with respect to each branch feature.
/// `grad` is N x F over the lattice (first branch slowest).
template <class T>
std::vector<Tensor<T>> fuse_backward(std::span<const Tensor<T>> features, Fusion mode, std::size_t r,
                                     const Tensor<T>& grad) {
    detail::check_fusion_inputs(features, r);
    const std::size_t c = features.size();
    const std::size_t width = features.front().cols();
    const std::size_t s = width / r;
    Shape extents;
    for (const auto& f : features) extents.push_back(f.rows());
    const std::size_t n = shape_product(extents);
    if (grad.rows() != n || grad.cols() != detail::fused_width(features, mode, r)) {
        throw DimensionError("fuse_backward: gradient shape " + shape_string(grad.shape()) + " does not match fusion");
    }
    std::vector<Tensor<T>> out;
    for (const auto& f : features) out.emplace_back(Shape{f.rows(), width});

    LatticeCursor cursor(extents);
    std::vector<T> prefix(c + 1), suffix(c + 1);
    for (std::size_t p = 0; p < n; ++p) {
        const T* g = grad.row(p);
        switch (mode) {
            case Fusion::product:
                for (std::size_t q = 0; q < r; ++q) {
                    for (std::size_t j = 0; j < s; ++j) {
                        const std::size_t col = q * s + j;
                        prefix[0] = T(1);
                        for (std::size_t i = 0; i < c; ++i) prefix[i + 1] = prefix[i] * features[i](cursor[i], col);
                        suffix[c] = T(1);
                        for (std::size_t i = c; i-- > 0;) suffix[i] = suffix[i + 1] * features[i](cursor[i], col);
                        for (std::size_t i = 0; i < c; ++i) out[i](cursor[i], col) += g[j] * prefix[i] * suffix[i + 1];
                    }
                }
                break;
            case Fusion::sum:
                for (std::size_t i = 0; i < c; ++i) {
                    T* dst = out[i].row(cursor[i]);
                    for (std::size_t q = 0; q < r; ++q) {
                        for (std::size_t j = 0; j < s; ++j) dst[q * s + j] += g[j];
                    }
                }
                break;
            case Fusion::concat:
                for (std::size_t i = 0; i < c; ++i) {
                    T* dst = out[i].row(cursor[i]);
                    for (std::size_t q = 0; q < r; ++q) {
                        for (std::size_t j = 0; j < s; ++j) dst[q * s + j] += g[i * s + j];
                    }
                }
                break;
        }
        cursor.advance();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace detail {

template <class T>
void check_params(const ModelParams<T>& params) {
    const auto& spec = params.spec;
    auto check = [](const std::vector<Linear<T>>& layers, const std::vector<LayerShape>& shapes, const char* what) {
        if (layers.size() != shapes.size()) throw ConfigError(std::string("parameter layout mismatch in ") + what);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].weight.rows() != shapes[i].fan_in || layers[i].weight.cols() != shapes[i].fan_out ||
                layers[i].bias.size() != shapes[i].fan_out) {
                throw ConfigError(std::string("parameter shape mismatch in ") + what + " layer " + std::to_string(i));
            }
        }
    };
    check(params.first, spec.first_layers(), "first");
    check(params.trunk, spec.trunk_layers(), "trunk");
    check(params.tail, spec.tail_layers(), "tail");
}

inline Tensor<double> branch_columns(const Tensor<double>& points, std::size_t first, std::size_t count) {
    Tensor<double> out({points.rows(), count});
    for (std::size_t i = 0; i < points.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) out(i, j) = points(i, first + j);
    }
    return out;
}

// Pre-fusion stack for one branch: its own first layer, then the trunk.
template <class T>
Tensor<T> run_branch(const ModelParams<T>& params, std::size_t branch, const Tensor<double>& coords) {
    const auto& spec = params.spec;
    const auto first_shapes = spec.first_layers();
    const auto trunk_shapes = spec.trunk_layers();
    Tensor<T> h = encode(coords.cast<T>(), spec.encoding);
    h = apply_layer(params.first[branch], h, first_shapes[branch].activated, spec.activation);
    for (std::size_t j = 0; j < params.trunk.size(); ++j) {
        h = apply_layer(params.trunk[j], h, trunk_shapes[j].activated, spec.activation);
    }
    return h;
}

template <class T>
Tensor<T> run_tail(const ModelParams<T>& params, Tensor<T> h) {
    const auto shapes = params.spec.tail_layers();
    for (std::size_t t = 0; t < params.tail.size(); ++t) {
        h = apply_layer(params.tail[t], h, shapes[t].activated, params.spec.activation);
    }
    return h;
}

}  // namespace detail

inline constexpr std::size_t kDefaultChunkRows = 16384;

/// Baseline MLP over independent points (N x K, normalised to [-1, 1]).
/// Rows are processed in chunks; results do not depend on the chunk size.
template <class T>
Tensor<T> forward_baseline(const ModelParams<T>& params, const Tensor<double>& points,
                           std::size_t chunk_rows = kDefaultChunkRows) {
    const auto& spec = params.spec;
    if (spec.is_split()) throw ConfigError("forward_baseline called with a split model");
    if (points.cols() != static_cast<std::size_t>(spec.k)) {
        throw ConfigError("forward_baseline: points have " + std::to_string(points.cols()) + " dims, model k is " +
                          std::to_string(spec.k));
    }
    detail::check_params(params);
    const std::size_t n = points.rows();
    Tensor<T> out({n, static_cast<std::size_t>(spec.o)});
    for (std::size_t begin = 0; begin < n; begin += chunk_rows) {
        const std::size_t count = std::min(chunk_rows, n - begin);
        Tensor<double> chunk({count, points.cols()},
                             std::vector<double>(points.row(begin), points.row(begin) + count * points.cols()));
        Tensor<T> h = detail::run_branch(params, 0, chunk);
        std::copy(h.values().begin(), h.values().end(), out.row(begin));
    }
    return out;
}

/// Pre-fusion features of every branch (B_i x W each) on a decomposed grid.
template <class T>
std::vector<Tensor<T>> branch_features(const ModelParams<T>& params, const DecomposedGrid& dg) {
    const auto& spec = params.spec;
    if (!spec.is_split()) throw ConfigError("branch_features needs a split model");
    detail::check_params(params);
    if (dg.branches.size() != spec.branches()) {
        throw ConfigError("grid has " + std::to_string(dg.branches.size()) + " branches, model expects " +
                          std::to_string(spec.branches()));
    }
    std::vector<Tensor<T>> features;
    for (std::size_t i = 0; i < dg.branches.size(); ++i) {
        if (dg.branches[i].cols() != spec.split->branch_sizes[i]) {
            throw ConfigError("branch " + std::to_string(i) + " coordinate width mismatch");
        }
        features.push_back(detail::run_branch(params, i, dg.branches[i]));
    }
    return features;
}

/// Split model over a decomposed lattice: branch stacks on the B_i
/// sub-coordinates, fusion broadcast over the lattice, tail layers on the
/// fused rows. Returns B_1 x ... x B_C x O.
template <class T>
Tensor<T> forward_coordx(const ModelParams<T>& params, const DecomposedGrid& dg,
                         std::size_t chunk_rows = kDefaultChunkRows) {
    const auto& spec = params.spec;
    auto features = branch_features(params, dg);
    const std::size_t n = dg.point_count();
    const std::size_t r = static_cast<std::size_t>(spec.split->r);
    Tensor<T> out({n, static_cast<std::size_t>(spec.o)});
    std::span<const Tensor<T>> fs(features);
    for (std::size_t begin = 0; begin < n; begin += chunk_rows) {
        const std::size_t count = std::min(chunk_rows, n - begin);
        Tensor<T> h = detail::run_tail(params, fuse_rows(fs, spec.split->fusion, r, begin, count));
        std::copy(h.values().begin(), h.values().end(), out.row(begin));
    }
    Shape shape = dg.branch_rows();
    shape.push_back(static_cast<std::size_t>(spec.o));
    return std::move(out).reshaped(shape);
}

/// Any model at arbitrary points (N x K). Split models evaluate every
/// branch on its own columns and fuse row by row.
template <class T>
Tensor<T> evaluate_points(const ModelParams<T>& params, const Tensor<double>& points) {
    const auto& spec = params.spec;
    if (!spec.is_split()) return forward_baseline(params, points);
    detail::check_params(params);
    if (points.cols() != static_cast<std::size_t>(spec.k)) throw ConfigError("evaluate_points: point width mismatch");
    std::vector<Tensor<T>> features;
    std::size_t col = 0;
    for (std::size_t i = 0; i < spec.branches(); ++i) {
        const std::size_t ki = spec.split->branch_sizes[i];
        features.push_back(detail::run_branch(params, i, detail::branch_columns(points, col, ki)));
        col += ki;
    }
    return detail::run_tail(params, fuse_aligned(std::span<const Tensor<T>>(features), spec.split->fusion,
                                                 static_cast<std::size_t>(spec.split->r)));
}

/// Any model over a full lattice; returns N x O in lattice order. Split
/// models are evaluated through the decomposed path with the model's own
/// branch partition.
template <class T>
Tensor<T> evaluate_grid(const ModelParams<T>& params, const CoordGrid& grid) {
    const auto& spec = params.spec;
    if (grid.dims() != static_cast<std::size_t>(spec.k)) throw ConfigError("evaluate_grid: grid dims mismatch");
    if (!spec.is_split()) return forward_baseline(params, grid_points(grid));
    auto dg = decompose(grid.with_branches(spec.split->branch_sizes));
    return forward_coordx(params, dg).as_matrix();
}

// ---------------------------------------------------------------------------
// Training forward / backward

template <class T>
struct LayerTrace {
    Tensor<T> input;
    Tensor<T> pre;  // pre-activation
};

/// Everything backward() needs from a forward pass.
template <class T>
struct ForwardState {
    std::vector<std::vector<LayerTrace<T>>> branches;  // per branch: first layer then trunk
    std::vector<Tensor<T>> features;                   // pre-fusion outputs
    std::vector<LayerTrace<T>> tail;
    Tensor<T> output;  // N x O, lattice order
};

namespace detail {

template <class T>
Tensor<T> traced_layer(const Linear<T>& layer, Tensor<T> input, bool activated, const ActivationSpec& act,
                       std::vector<LayerTrace<T>>& trace) {
    Tensor<T> z = linear_forward(layer, input);
    Tensor<T> a = z;
    if (activated) activate_inplace(a, act);
    trace.push_back({std::move(input), std::move(z)});
    return a;
}

template <class T>
Tensor<T> traced_branch(const ModelParams<T>& params, std::size_t branch, const Tensor<double>& coords,
                        std::vector<LayerTrace<T>>& trace) {
    const auto& spec = params.spec;
    const auto first_shapes = spec.first_layers();
    const auto trunk_shapes = spec.trunk_layers();
    Tensor<T> h = encode(coords.cast<T>(), spec.encoding);
    h = traced_layer(params.first[branch], std::move(h), first_shapes[branch].activated, spec.activation, trace);
    for (std::size_t j = 0; j < params.trunk.size(); ++j) {
        h = traced_layer(params.trunk[j], std::move(h), trunk_shapes[j].activated, spec.activation, trace);
    }
    return h;
}

}  // namespace detail

template <class T>
ForwardState<T> forward_traced_baseline(const ModelParams<T>& params, const Tensor<double>& points) {
    if (params.spec.is_split()) throw ConfigError("forward_traced_baseline called with a split model");
    if (points.cols() != static_cast<std::size_t>(params.spec.k)) throw ConfigError("point width mismatch");
    detail::check_params(params);
    ForwardState<T> st;
    st.branches.resize(1);
    st.output = detail::traced_branch(params, 0, points, st.branches[0]);
    return st;
}

template <class T>
ForwardState<T> forward_traced_coordx(const ModelParams<T>& params, const DecomposedGrid& dg) {
    const auto& spec = params.spec;
    if (!spec.is_split()) throw ConfigError("forward_traced_coordx needs a split model");
    detail::check_params(params);
    if (dg.branches.size() != spec.branches()) throw ConfigError("grid branch count mismatch");
    ForwardState<T> st;
    st.branches.resize(dg.branches.size());
    for (std::size_t i = 0; i < dg.branches.size(); ++i) {
        if (dg.branches[i].cols() != spec.split->branch_sizes[i]) throw ConfigError("branch coordinate width mismatch");
        st.features.push_back(detail::traced_branch(params, i, dg.branches[i], st.branches[i]));
    }
    const std::size_t n = dg.point_count();
    Tensor<T> h = fuse_rows(std::span<const Tensor<T>>(st.features), spec.split->fusion,
                            static_cast<std::size_t>(spec.split->r), 0, n);
    const auto shapes = spec.tail_layers();
    for (std::size_t t = 0; t < params.tail.size(); ++t) {
        h = detail::traced_layer(params.tail[t], std::move(h), shapes[t].activated, spec.activation, st.tail);
    }
    st.output = std::move(h);
    return st;
}

namespace detail {

// Backpropagates `grad` (w.r.t. the layer's output) through one traced
// layer, accumulating into `acc`; returns the gradient w.r.t. its input.
template <class T>
Tensor<T> layer_backward(const Linear<T>& layer, const LayerTrace<T>& trace, Tensor<T> grad, bool activated,
                         const ActivationSpec& act, Linear<T>& acc, bool need_input_grad) {
    if (activated) activation_backward_inplace(grad, trace.pre, act);
    Tensor<T> dw = matmul(transpose(trace.input), grad);
    auto w = acc.weight.values();
    auto d = dw.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += d[i];
    T* b = acc.bias.data();
    for (std::size_t i = 0; i < grad.rows(); ++i) {
        const T* g = grad.row(i);
        for (std::size_t j = 0; j < grad.cols(); ++j) b[j] += g[j];
    }
    if (!need_input_grad) return {};
    return matmul(grad, transpose(layer.weight));
}

}  // namespace detail

/// Backpropagates pre-fusion feature gradients (one per branch) through
/// the branch stacks, accumulating into `grads`. Trunk gradients collect
/// the contributions of every branch, in branch order.
template <class T>
void backward_prefusion(const ModelParams<T>& params, const ForwardState<T>& st,
                        std::vector<Tensor<T>> feature_grads, ModelParams<T>& grads) {
    const auto& spec = params.spec;
    const auto first_shapes = spec.first_layers();
    const auto trunk_shapes = spec.trunk_layers();
    for (std::size_t b = 0; b < st.branches.size(); ++b) {
        const auto& trace = st.branches[b];
        Tensor<T> g = std::move(feature_grads[b]);
        for (std::size_t j = params.trunk.size(); j-- > 0;) {
            g = detail::layer_backward(params.trunk[j], trace[j + 1], std::move(g), trunk_shapes[j].activated,
                                       spec.activation, grads.trunk[j], true);
        }
        detail::layer_backward(params.first[b], trace[0], std::move(g), first_shapes[b].activated, spec.activation,
                               grads.first[b], false);
    }
}

/// Exact reverse-mode gradients of every weight and bias given dLoss/dOut
/// (N x O, lattice order for split models).
template <class T>
ModelParams<T> backward(const ModelParams<T>& params, const ForwardState<T>& st, const Tensor<T>& grad_out) {
    const auto& spec = params.spec;
    if (grad_out.rows() != st.output.rows() || grad_out.cols() != st.output.cols()) {
        throw DimensionError("backward: gradient shape does not match the forward output");
    }
    ModelParams<T> grads = params.zeros_like();
    Tensor<T> g = grad_out.as_matrix();
    if (!spec.is_split()) {
        backward_prefusion(params, st, {std::move(g)}, grads);
        return grads;
    }
    const auto shapes = spec.tail_layers();
    for (std::size_t t = params.tail.size(); t-- > 0;) {
        g = detail::layer_backward(params.tail[t], st.tail[t], std::move(g), shapes[t].activated, spec.activation,
                                   grads.tail[t], true);
    }
    auto feature_grads = fuse_backward(std::span<const Tensor<T>>(st.features), spec.split->fusion,
                                       static_cast<std::size_t>(spec.split->r), g);
    backward_prefusion(params, st, std::move(feature_grads), grads);
    return grads;
}

// ---------------------------------------------------------------------------
// Operation counting

struct FcOpCount {
    std::uint64_t multiply_adds = 0;
    std::uint64_t layer_rows = 0;  // sum over layers of rows processed
};

/// Multiply-adds of every fully connected layer when the model evaluates a
/// lattice whose split branches see `branch_rows` (B_i) rows each.
/// Pre-fusion layers process B_i rows per branch, post-fusion (and all
/// baseline) layers process N = prod B_i rows. With `uniform_width` every
/// layer is costed as M x M, the assumption behind the analytic ratio.
inline FcOpCount count_fc_ops(const ModelSpec& spec, const Shape& branch_rows, bool uniform_width = false) {
    spec.validate();
    std::uint64_t n = 1;
    for (auto b : branch_rows) n *= b;
    const std::uint64_t square = static_cast<std::uint64_t>(spec.m) * static_cast<std::uint64_t>(spec.m);
    FcOpCount count;
    auto add = [&](const LayerShape& s, std::uint64_t rows) {
        count.layer_rows += rows;
        count.multiply_adds += rows * (uniform_width ? square : s.fan_in * s.fan_out);
    };
    if (!spec.is_split()) {
        for (const auto& s : spec.first_layers()) add(s, n);
        for (const auto& s : spec.trunk_layers()) add(s, n);
        return count;
    }
    if (branch_rows.size() != spec.branches()) throw ConfigError("count_fc_ops: one row count per branch required");
    const auto first = spec.first_layers();
    for (std::size_t i = 0; i < first.size(); ++i) add(first[i], branch_rows[i]);
    for (const auto& s : spec.trunk_layers()) {
        for (auto b : branch_rows) add(s, b);
    }
    for (const auto& s : spec.tail_layers()) add(s, n);
    return count;
}

/// Rows each branch of `spec` sees on a lattice with the given per-axis extents.
inline Shape branch_rows_for(const ModelSpec& spec, const Shape& axis_extents) {
    if (!spec.is_split()) return {shape_product(axis_extents)};
    Shape rows;
    std::size_t axis = 0;
    for (auto k : spec.split->branch_sizes) {
        std::size_t b = 1;
        for (std::size_t j = 0; j < k; ++j) b *= axis_extents.at(axis + j);
        rows.push_back(b);
        axis += k;
    }
    return rows;
}

}  // namespace coordx

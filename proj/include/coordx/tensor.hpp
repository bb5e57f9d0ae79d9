#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coordx/errors.hpp"
#include "coordx/parallel.hpp"

namespace coordx {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense row-major tensor. Every extent is at least one and the flat
/// payload always holds exactly product(shape) values. A default
/// constructed tensor is empty (no shape, no data) and only serves as a
/// placeholder.
///
/// Most kernels treat a tensor as a matrix: `cols()` is the trailing extent
/// and `rows()` collapses every leading axis.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(shape_product(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (shape_product(shape_) != data_.size()) {
            throw DimensionError("tensor payload has " + std::to_string(data_.size()) +
                                 " values, shape " + shape_string(shape_) + " needs " +
                                 std::to_string(shape_product(shape_)));
        }
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    const std::vector<T>& storage() const { return data_; }

    T* row(std::size_t i) { return data_.data() + i * cols(); }
    const T* row(std::size_t i) const { return data_.data() + i * cols(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

    Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
    Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

    /// Collapses every leading axis: shape becomes {rows(), cols()}.
    Tensor as_matrix() const& { return reshaped({rows(), cols()}); }
    Tensor as_matrix() && {
        Shape s{rows(), cols()};
        return std::move(*this).reshaped(std::move(s));
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw DimensionError("tensor needs at least one axis");
        for (auto e : shape) {
            if (e == 0) throw DimensionError("zero extent in shape " + shape_string(shape));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

namespace detail {

// Register-blocked C[rows] = A[rows] * B. Every output element is summed
// over k in ascending order, whatever the blocking; vectorisation runs
// across output columns only.
template <class T>
void gemm_rows(const T* a, std::size_t k, const T* b, std::size_t n, T* c, std::size_t row_begin,
               std::size_t row_end) {
    constexpr std::size_t kRowBlock = 4;
    constexpr std::size_t kColBlock = 128 / sizeof(T) > 0 ? 128 / sizeof(T) : 1;
    std::size_t i = row_begin;
    for (; i + kRowBlock <= row_end; i += kRowBlock) {
        const T* a0 = a + (i + 0) * k;
        const T* a1 = a + (i + 1) * k;
        const T* a2 = a + (i + 2) * k;
        const T* a3 = a + (i + 3) * k;
        std::size_t j0 = 0;
        for (; j0 + kColBlock <= n; j0 += kColBlock) {
            T acc[kRowBlock][kColBlock] = {};
            for (std::size_t p = 0; p < k; ++p) {
                const T* brow = b + p * n + j0;
                const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
                for (std::size_t j = 0; j < kColBlock; ++j) {
                    const T w = brow[j];
                    acc[0][j] += x0 * w;
                    acc[1][j] += x1 * w;
                    acc[2][j] += x2 * w;
                    acc[3][j] += x3 * w;
                }
            }
            for (std::size_t r = 0; r < kRowBlock; ++r) {
                std::copy(acc[r], acc[r] + kColBlock, c + (i + r) * n + j0);
            }
        }
        if (j0 < n) {
            std::size_t width = n - j0;
            T acc[kRowBlock][kColBlock] = {};
            for (std::size_t p = 0; p < k; ++p) {
                const T* brow = b + p * n + j0;
                const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
                for (std::size_t j = 0; j < width; ++j) {
                    const T w = brow[j];
                    acc[0][j] += x0 * w;
                    acc[1][j] += x1 * w;
                    acc[2][j] += x2 * w;
                    acc[3][j] += x3 * w;
                }
            }
            for (std::size_t r = 0; r < kRowBlock; ++r) {
                std::copy(acc[r], acc[r] + width, c + (i + r) * n + j0);
            }
        }
    }
    for (; i < row_end; ++i) {
        T* crow = c + i * n;
        std::fill(crow, crow + n, T(0));
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T x = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += x * brow[j];
        }
    }
}

}  // namespace detail

/// Matrix product of a (rows x k, leading axes collapsed) and b (k x n).
/// Each output element is accumulated sequentially over k, so results are
/// bit-identical for any thread count.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (b.ndim() != 2) throw DimensionError("matmul: right operand must be 2-D");
    if (a.cols() != b.extent(0)) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) +
                             " x " + shape_string(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> c({m, n});
    parallel_for(m, 256, [&](std::size_t begin, std::size_t end) {
        detail::gemm_rows(a.data(), k, b.data(), n, c.data(), begin, end);
    });
    return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<T> t({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        const T* src = a.row(i);
        for (std::size_t j = 0; j < n; ++j) t(j, i) = src[j];
    }
    return t;
}

/// Broadcast outer product of C factors of shape B_i x M:
/// out[p_1, ..., p_C, m] = prod_i factors[i][p_i, m], multiplied left to right.
template <class T>
Tensor<T> broadcast_outer(std::span<const Tensor<T>> factors) {
    if (factors.empty()) throw DimensionError("broadcast_outer: no factors");
    const std::size_t width = factors.front().cols();
    Shape out_shape;
    for (const auto& f : factors) {
        if (f.ndim() != 2) throw DimensionError("broadcast_outer: factors must be 2-D");
        if (f.cols() != width) {
            throw DimensionError("broadcast_outer: trailing extents differ (" +
                                 std::to_string(f.cols()) + " vs " + std::to_string(width) + ")");
        }
        out_shape.push_back(f.rows());
    }
    std::vector<T> acc(factors.front().storage());
    std::size_t acc_rows = factors.front().rows();
    for (std::size_t f = 1; f < factors.size(); ++f) {
        const auto& next = factors[f];
        const std::size_t b = next.rows();
        std::vector<T> grown(acc_rows * b * width);
        for (std::size_t p = 0; p < acc_rows; ++p) {
            const T* left = acc.data() + p * width;
            for (std::size_t q = 0; q < b; ++q) {
                const T* right = next.row(q);
                T* dst = grown.data() + (p * b + q) * width;
                for (std::size_t m = 0; m < width; ++m) dst[m] = left[m] * right[m];
            }
        }
        acc = std::move(grown);
        acc_rows *= b;
    }
    out_shape.push_back(width);
    return Tensor<T>(std::move(out_shape), std::move(acc));
}

template <class T>
Tensor<T> broadcast_outer(const std::vector<Tensor<T>>& factors) {
    return broadcast_outer(std::span<const Tensor<T>>(factors));
}

/// Views the trailing axis of width r*S as an r x S block (r slowest) and
/// sums over r, leaving a trailing axis of width S.
template <class T>
Tensor<T> reduce_last(const Tensor<T>& t, std::size_t r) {
    if (r == 0) throw DimensionError("reduce_last: reduction extent must be positive");
    const std::size_t width = t.cols();
    if (width % r != 0) {
        throw DimensionError("reduce_last: trailing extent " + std::to_string(width) +
                             " not divisible by " + std::to_string(r));
    }
    const std::size_t s = width / r;
    Shape shape = t.shape();
    shape.back() = s;
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const T* src = t.row(i);
        T* dst = out.row(i);
        std::copy(src, src + s, dst);
        for (std::size_t k = 1; k < r; ++k) {
            for (std::size_t j = 0; j < s; ++j) dst[j] += src[k * s + j];
        }
    }
    return out;
}

// Binary block: "CXT1", u32 ndim, ndim x u32 extents, little-endian f64 payload.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated tensor block");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double d) {
    auto v = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(b, 8);
}

inline double get_f64(const unsigned char* b) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace detail

inline constexpr char kTensorMagic[4] = {'C', 'X', 'T', '1'};

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write(kTensorMagic, 4);
    detail::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
    for (auto v : t.values()) detail::put_f64(os, static_cast<double>(v));
    if (!os) throw IoError("failed writing tensor block");
}

template <class T = double>
Tensor<T> read_tensor(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw ParseError("truncated tensor block (magic)");
    if (std::memcmp(magic, kTensorMagic, 4) != 0) throw ParseError("bad tensor magic");
    std::uint32_t ndim = detail::get_u32(is);
    if (ndim == 0 || ndim > 16) throw ParseError("implausible tensor rank " + std::to_string(ndim));
    Shape shape(ndim);
    for (auto& e : shape) {
        e = detail::get_u32(is);
        if (e == 0) throw ParseError("zero extent in tensor block");
    }
    std::size_t n = shape_product(shape);
    std::vector<unsigned char> raw(n * 8);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw ParseError("truncated tensor payload");
    }
    std::vector<T> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(detail::get_f64(raw.data() + 8 * i));
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace coordx

#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "coordx/errors.hpp"
#include "coordx/random.hpp"
#include "coordx/tensor.hpp"

namespace coordx {

enum class EncodingKind { none, positional };
enum class ActivationKind { relu, sine };

struct EncodingSpec {
    EncodingKind kind = EncodingKind::none;
    int frequencies = 0;  // d, positional only

    /// Width of the encoded vector for a k-dimensional point: 2kd + k for
    /// positional encoding, k otherwise.
    std::size_t width(std::size_t k) const {
        return kind == EncodingKind::positional ? 2 * k * static_cast<std::size_t>(frequencies) + k : k;
    }

    void validate() const {
        if (kind == EncodingKind::positional && frequencies < 1) {
            throw ConfigError("positional encoding needs frequencies >= 1");
        }
    }

    friend bool operator==(const EncodingSpec&, const EncodingSpec&) = default;
};

struct ActivationSpec {
    ActivationKind kind = ActivationKind::sine;
    double omega0 = 30.0;

    friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

/// Lifts each coordinate p to (sin(2^0 pi p), cos(2^0 pi p), ...,
/// sin(2^(d-1) pi p), cos(2^(d-1) pi p)); the per-coordinate blocks are
/// laid out in coordinate order and followed by the raw coordinates.
template <class T>
Tensor<T> positional_encode(const Tensor<T>& x, int d) {
    if (d < 1) throw ConfigError("positional_encode: frequency count must be >= 1");
    const std::size_t n = x.rows(), k = x.cols();
    const std::size_t width = 2 * k * static_cast<std::size_t>(d) + k;
    Tensor<T> out({n, width});
    for (std::size_t i = 0; i < n; ++i) {
        const T* src = x.row(i);
        T* dst = out.row(i);
        for (std::size_t c = 0; c < k; ++c) {
            double p = static_cast<double>(src[c]);
            double scale = std::numbers::pi;
            for (int j = 0; j < d; ++j) {
                *dst++ = static_cast<T>(std::sin(scale * p));
                *dst++ = static_cast<T>(std::cos(scale * p));
                scale *= 2.0;
            }
        }
        for (std::size_t c = 0; c < k; ++c) *dst++ = src[c];
    }
    return out;
}

template <class T>
Tensor<T> encode(const Tensor<T>& x, const EncodingSpec& spec) {
    if (spec.kind == EncodingKind::positional) return positional_encode(x, spec.frequencies);
    return x;
}

/// Largest |w| produced by siren_init for the given layer.
inline double siren_bound(std::size_t fan_in, bool is_first, double omega0) {
    const double n = static_cast<double>(fan_in);
    return is_first ? 1.0 / n : std::sqrt(6.0 / n) / omega0;
}

/// Sine-network weight initialisation, returned as fan_out x fan_in.
/// First layer: U(-1/fan_in, 1/fan_in); hidden: U(+-sqrt(6/fan_in)/omega0).
template <class T = double>
Tensor<T> siren_init(Rng& rng, std::size_t fan_in, std::size_t fan_out, bool is_first,
                     double omega0) {
    if (fan_in == 0 || fan_out == 0) throw ConfigError("siren_init: fan sizes must be >= 1");
    if (!(omega0 > 0)) throw ConfigError("siren_init: omega0 must be positive");
    const double bound = siren_bound(fan_in, is_first, omega0);
    Tensor<T> w({fan_out, fan_in});
    for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return w;
}

inline std::string to_string(EncodingKind k) { return k == EncodingKind::positional ? "positional" : "none"; }
inline std::string to_string(ActivationKind k) { return k == ActivationKind::sine ? "sine" : "relu"; }

}  // namespace coordx

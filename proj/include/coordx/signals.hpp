#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "coordx/errors.hpp"
#include "coordx/grid.hpp"
#include "coordx/random.hpp"
#include "coordx/tensor.hpp"

namespace coordx {

// ---------------------------------------------------------------------------
// 8-bit PGM (P5) / PPM (P6). Images are H x W x C tensors with values in [0, 1].

namespace detail {

inline std::string pnm_token(std::istream& is) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw ParseError("PNM header truncated");
    return tok;
}

inline std::size_t pnm_number(std::istream& is, const char* what) {
    std::string tok = pnm_token(is);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        throw ParseError(std::string("PNM header: bad ") + what + " '" + tok + "'");
    }
    return static_cast<std::size_t>(std::stoull(tok));
}

}  // namespace detail

inline Tensor<double> read_pnm(std::istream& is) {
    std::string magic = detail::pnm_token(is);
    std::size_t channels;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw ParseError("unsupported PNM magic '" + magic + "' (expected P5 or P6)");
    }
    std::size_t width = detail::pnm_number(is, "width");
    std::size_t height = detail::pnm_number(is, "height");
    std::size_t maxval = detail::pnm_number(is, "maxval");
    if (width == 0 || height == 0) throw ParseError("PNM header: zero image size");
    if (maxval == 0 || maxval > 255) throw ParseError("PNM header: only 8-bit maxval (1..255) is supported");
    std::vector<unsigned char> raw(width * height * channels);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw ParseError("PNM pixel data truncated");
    }
    Tensor<double> img({height, width, channels});
    for (std::size_t i = 0; i < raw.size(); ++i) img[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
    return img;
}

inline Tensor<double> read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image '" + path + "'");
    return read_pnm(f);
}

inline unsigned char quantize_u8(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 1.0) return 255;
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

/// Writes P5 for one channel, P6 for three.
inline void write_pnm(std::ostream& os, const Tensor<double>& img) {
    if (img.ndim() != 3 || (img.extent(2) != 1 && img.extent(2) != 3)) {
        throw DimensionError("write_pnm: expected H x W x {1,3}, got " + shape_string(img.shape()));
    }
    os << (img.extent(2) == 1 ? "P5" : "P6") << "\n" << img.extent(1) << " " << img.extent(0) << "\n255\n";
    std::vector<char> raw(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) raw[i] = static_cast<char>(quantize_u8(img[i]));
    os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!os) throw IoError("failed writing image");
}

inline void write_pnm(const std::string& path, const Tensor<double>& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot create image '" + path + "'");
    write_pnm(f, img);
}

// ---------------------------------------------------------------------------
// Signals

enum class SignalKind { image2d, video3d, occupancy3d };

/// Ground-truth field over the normalised box [-1, 1]^K with a canonical
/// sampling lattice (`extents`, one per axis). Images use axes (row, col),
/// videos (row, col, frame), occupancy fields (x, y, z).
struct Signal {
    SignalKind kind = SignalKind::image2d;
    std::string name;
    int k = 2;
    int o = 1;
    Shape extents;
    std::function<void(const double* point, double* out)> eval;
    std::function<double(const double* point)> surface_distance;  // occupancy only; negative inside

    CoordGrid canonical_grid(std::vector<std::size_t> branch_sizes = {}) const {
        return make_grid(extents, {}, std::move(branch_sizes));
    }

    Tensor<double> values_at(const Tensor<double>& points) const {
        if (points.cols() != static_cast<std::size_t>(k)) throw DimensionError("signal: point width mismatch");
        Tensor<double> out({points.rows(), static_cast<std::size_t>(o)});
        for (std::size_t i = 0; i < points.rows(); ++i) eval(points.row(i), out.row(i));
        return out;
    }

    /// Values on the canonical lattice, N x O in lattice order.
    Tensor<double> canonical_values() const { return values_at(grid_points(canonical_grid())); }
};

using SignalParams = std::map<std::string, double>;

namespace detail {

inline double param(const SignalParams& p, const std::string& key, double fallback) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

inline std::size_t nearest_index(double coord, std::size_t extent) {
    if (extent == 1) return 0;
    double u = (coord + 1.0) * 0.5 * static_cast<double>(extent - 1);
    long long i = std::llround(u);
    return static_cast<std::size_t>(std::clamp<long long>(i, 0, static_cast<long long>(extent) - 1));
}

// Smooth random 1-D profile in roughly [0.1, 0.9].
struct Profile {
    double amp[3], freq[3], phase[3];
    explicit Profile(Rng& rng) {
        for (int j = 0; j < 3; ++j) {
            amp[j] = rng.uniform(0.3, 1.0);
            freq[j] = rng.uniform(0.5, 3.0);
            phase[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
    }
    double operator()(double t) const {
        double s = 0, norm = 0;
        for (int j = 0; j < 3; ++j) {
            s += amp[j] * std::sin(std::numbers::pi * freq[j] * t + phase[j]);
            norm += amp[j];
        }
        return 0.5 + 0.4 * s / norm;
    }
};

}  // namespace detail

/// Raster image as a signal; evaluation uses the nearest pixel, pixel
/// centres sit on the [-1, 1]^2 lattice.
inline Signal image_signal(const Tensor<double>& img, std::string name = "image") {
    if (img.ndim() != 3) throw DimensionError("image_signal: expected H x W x C");
    Signal s;
    s.kind = SignalKind::image2d;
    s.name = std::move(name);
    s.k = 2;
    s.o = static_cast<int>(img.extent(2));
    s.extents = {img.extent(0), img.extent(1)};
    s.eval = [img](const double* p, double* out) {
        std::size_t r = detail::nearest_index(p[0], img.extent(0));
        std::size_t c = detail::nearest_index(p[1], img.extent(1));
        const std::size_t ch = img.extent(2);
        const double* px = img.data() + (r * img.extent(1) + c) * ch;
        std::copy(px, px + ch, out);
    };
    return s;
}

inline Signal load_image(const std::string& path) { return image_signal(read_pnm(path), path); }

inline const std::vector<std::string>& synthetic_signal_names() {
    static const std::vector<std::string> names{"rank1_image",           "gaussians_image", "checker_image",
                                                "moving_gaussian_video", "sphere_occ",      "torus_occ"};
    return names;
}

/// Analytic fitting targets. `extents` is the canonical lattice; when
/// empty a per-kind default is used (64x64 images, 32x32x16 video, 32^3
/// occupancy).
inline Signal synth_signal(const std::string& name, const SignalParams& params, Rng& rng, Shape extents = {}) {
    Signal s;
    s.name = name;
    auto want_dims = [&](std::size_t k, Shape fallback) {
        if (extents.empty()) extents = std::move(fallback);
        if (extents.size() != k) throw ConfigError("signal '" + name + "' needs " + std::to_string(k) + " extents");
        s.extents = extents;
        s.k = static_cast<int>(k);
    };
    if (name == "rank1_image") {
        want_dims(2, {64, 64});
        s.kind = SignalKind::image2d;
        s.o = static_cast<int>(detail::param(params, "channels", 1));
        detail::Profile u(rng), v(rng);
        std::vector<double> gain(static_cast<std::size_t>(s.o));
        for (auto& g : gain) g = rng.uniform(0.6, 1.0);
        s.eval = [u, v, gain](const double* p, double* out) {
            double base = u(p[0]) * v(p[1]);
            for (std::size_t c = 0; c < gain.size(); ++c) out[c] = gain[c] * base;
        };
    } else if (name == "gaussians_image") {
        want_dims(2, {64, 64});
        s.kind = SignalKind::image2d;
        s.o = static_cast<int>(detail::param(params, "channels", 3));
        const int count = static_cast<int>(detail::param(params, "count", 6));
        const double smin = detail::param(params, "sigma_min", 0.15);
        const double smax = detail::param(params, "sigma_max", 0.4);
        struct Blob {
            double cy, cx, inv2s2;
            std::vector<double> amp;
        };
        std::vector<Blob> blobs;
        for (int i = 0; i < count; ++i) {
            Blob b;
            b.cy = rng.uniform(-0.8, 0.8);
            b.cx = rng.uniform(-0.8, 0.8);
            double sigma = rng.uniform(smin, smax);
            b.inv2s2 = 1.0 / (2.0 * sigma * sigma);
            for (int c = 0; c < s.o; ++c) b.amp.push_back(rng.uniform(0.2, 1.0));
            blobs.push_back(std::move(b));
        }
        s.eval = [blobs, o = s.o](const double* p, double* out) {
            for (int c = 0; c < o; ++c) out[c] = 0.0;
            for (const auto& b : blobs) {
                double d2 = (p[0] - b.cy) * (p[0] - b.cy) + (p[1] - b.cx) * (p[1] - b.cx);
                double g = std::exp(-d2 * b.inv2s2);
                for (int c = 0; c < o; ++c) out[c] += b.amp[static_cast<std::size_t>(c)] * g;
            }
            for (int c = 0; c < o; ++c) out[c] = 0.05 + 0.9 * std::tanh(out[c]);
        };
    } else if (name == "checker_image") {
        want_dims(2, {64, 64});
        s.kind = SignalKind::image2d;
        s.o = static_cast<int>(detail::param(params, "channels", 1));
        const double cells = detail::param(params, "cells", 8);
        s.eval = [cells, o = s.o](const double* p, double* out) {
            auto cell = [cells](double t) {
                return static_cast<long long>(std::floor(std::clamp((t + 1.0) * 0.5, 0.0, 0.999999) * cells));
            };
            double v = ((cell(p[0]) + cell(p[1])) % 2 == 0) ? 0.8 : 0.2;
            for (int c = 0; c < o; ++c) out[c] = v;
        };
    } else if (name == "moving_gaussian_video") {
        want_dims(3, {32, 32, 16});
        s.kind = SignalKind::video3d;
        s.o = static_cast<int>(detail::param(params, "channels", 3));
        const double sigma = detail::param(params, "sigma", 0.25);
        const double radius = detail::param(params, "radius", 0.5);
        std::vector<double> color(static_cast<std::size_t>(s.o));
        for (auto& c : color) c = rng.uniform(0.5, 1.0);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s.eval = [sigma, radius, color, phase](const double* p, double* out) {
            double ang = phase + std::numbers::pi * p[2];
            double cy = radius * std::sin(ang), cx = radius * std::cos(ang);
            double d2 = (p[0] - cy) * (p[0] - cy) + (p[1] - cx) * (p[1] - cx);
            double g = std::exp(-d2 / (2.0 * sigma * sigma));
            for (std::size_t c = 0; c < color.size(); ++c) out[c] = 0.05 + 0.9 * color[c] * g;
        };
    } else if (name == "sphere_occ") {
        want_dims(3, {32, 32, 32});
        s.kind = SignalKind::occupancy3d;
        s.o = 1;
        const double r = detail::param(params, "radius", 0.5);
        const double cx = detail::param(params, "cx", 0.0), cy = detail::param(params, "cy", 0.0),
                     cz = detail::param(params, "cz", 0.0);
        s.surface_distance = [=](const double* p) {
            return std::sqrt((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy) + (p[2] - cz) * (p[2] - cz)) - r;
        };
    } else if (name == "torus_occ") {
        want_dims(3, {32, 32, 32});
        s.kind = SignalKind::occupancy3d;
        s.o = 1;
        const double major = detail::param(params, "major", 0.5);
        const double minor = detail::param(params, "minor", 0.2);
        s.surface_distance = [=](const double* p) {
            double q = std::sqrt(p[0] * p[0] + p[1] * p[1]) - major;
            return std::sqrt(q * q + p[2] * p[2]) - minor;
        };
    } else {
        throw ConfigError("unknown synthetic signal '" + name + "'");
    }
    if (s.kind == SignalKind::occupancy3d) {
        s.eval = [dist = s.surface_distance](const double* p, double* out) { out[0] = dist(p) <= 0.0 ? 1.0 : 0.0; };
    }
    return s;
}

// ---------------------------------------------------------------------------
// Metrics

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) on values clamped to [0, 1]; identical inputs (and
/// anything above the cap) report kPsnrCap.
template <class T, class U>
double psnr(const Tensor<T>& pred, const Tensor<U>& truth) {
    if (pred.size() != truth.size() || pred.cols() != truth.cols()) {
        throw DimensionError("psnr: shapes differ " + shape_string(pred.shape()) + " vs " + shape_string(truth.shape()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double a = std::clamp(static_cast<double>(pred[i]), 0.0, 1.0);
        double b = std::clamp(static_cast<double>(truth[i]), 0.0, 1.0);
        sum += (a - b) * (a - b);
    }
    double mse = sum / static_cast<double>(pred.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

using Labels = std::vector<unsigned char>;

/// |pred & truth| / |pred | truth|; an empty union counts as perfect.
inline double iou(const Labels& pred, const Labels& truth) {
    if (pred.size() != truth.size()) throw DimensionError("iou: label vectors differ in length");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        bool a = pred[i] != 0, b = truth[i] != 0;
        inter += (a && b);
        uni += (a || b);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Occupied where sigmoid(logit) > 0.5.
template <class T>
Labels labels_from_logits(const Tensor<T>& logits) {
    Labels out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > T(0) ? 1 : 0;
    return out;
}

/// Uniform box samples ("easy") and samples within `band` of the surface
/// ("hard"), labelled by the analytic oracle.
struct IoUPointSets {
    Tensor<double> easy;
    Labels easy_labels;
    Tensor<double> hard;
    Labels hard_labels;
    double band = 0.0;
};

inline IoUPointSets build_iou_sets(const Signal& signal, std::size_t n, double band, Rng& rng,
                                   std::size_t max_attempts_per_point = 10000) {
    if (signal.kind != SignalKind::occupancy3d || !signal.surface_distance) {
        throw ConfigError("IoU point sets need an occupancy signal with a surface distance");
    }
    if (n == 0) throw ConfigError("IoU point sets: n must be >= 1");
    if (!(band > 0.0)) throw ConfigError("IoU point sets: band must be positive");
    IoUPointSets sets;
    sets.band = band;
    sets.easy = Tensor<double>({n, 3});
    sets.hard = Tensor<double>({n, 3});
    double p[3];
    for (std::size_t i = 0; i < n; ++i) {
        for (double& c : p) c = rng.uniform(-1.0, 1.0);
        std::copy(p, p + 3, sets.easy.row(i));
        sets.easy_labels.push_back(signal.surface_distance(p) <= 0.0 ? 1 : 0);
    }
    const std::size_t budget = n * max_attempts_per_point;
    std::size_t attempts = 0;
    for (std::size_t i = 0; i < n;) {
        if (++attempts > budget) {
            throw ConfigError("IoU hard set: rejection sampling found only " + std::to_string(i) + " of " +
                              std::to_string(n) + " points within band " + std::to_string(band));
        }
        for (double& c : p) c = rng.uniform(-1.0, 1.0);
        double d = signal.surface_distance(p);
        if (std::abs(d) > band) continue;
        std::copy(p, p + 3, sets.hard.row(i));
        sets.hard_labels.push_back(d <= 0.0 ? 1 : 0);
        ++i;
    }
    return sets;
}

inline void write_points_csv(std::ostream& os, const Tensor<double>& points, const Labels& labels) {
    os << "x,y,z,label\n";
    os.precision(17);
    for (std::size_t i = 0; i < points.rows(); ++i) {
        os << points(i, 0) << "," << points(i, 1) << "," << points(i, 2) << "," << static_cast<int>(labels[i]) << "\n";
    }
}

}  // namespace coordx

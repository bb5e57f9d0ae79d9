#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "coordx/errors.hpp"
#include "coordx/grid.hpp"
#include "coordx/model.hpp"
#include "coordx/parallel.hpp"
#include "coordx/tensor.hpp"

namespace coordx {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline Vec3 normalized(const Vec3& a) {
    const double n = std::sqrt(dot(a, a));
    if (!(n > 0)) throw ConfigError("render: zero-length vector");
    return (1.0 / n) * a;
}

/// Field values on a regular 3D lattice spanning [lo, hi] per axis
/// (nodes include both ends). values is Rx x Ry x Rz x O.
struct DenseGrid3 {
    std::array<std::size_t, 3> res{2, 2, 2};
    Vec3 lo{-1, -1, -1};
    Vec3 hi{1, 1, 1};
    Tensor<double> values;

    std::size_t channels() const { return values.empty() ? 0 : values.cols(); }

    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t c = 0) const {
        return values.data()[((i * res[1] + j) * res[2] + k) * channels() + c];
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (res[a] < 2) throw ConfigError("DenseGrid3: resolution must be >= 2 per axis");
            if (!(hi[a] > lo[a])) throw ConfigError("DenseGrid3: empty bounding box");
        }
        if (values.ndim() != 4 || values.extent(0) != res[0] || values.extent(1) != res[1] ||
            values.extent(2) != res[2]) {
            throw DimensionError("DenseGrid3: values shape " + shape_string(values.shape()) + " does not match resolution");
        }
    }
};

inline CoordGrid dense_lattice(const std::array<std::size_t, 3>& res, const Vec3& lo, const Vec3& hi) {
    return make_grid({res[0], res[1], res[2]}, {{lo[0], hi[0]}, {lo[1], hi[1]}, {lo[2], hi[2]}});
}

/// Evaluates a K = 3 model once on every lattice node. Split models go
/// through the decomposed forward pass.
template <class T>
DenseGrid3 precompute_grid(const ModelParams<T>& params, const std::array<std::size_t, 3>& res,
                           const Vec3& lo = {-1, -1, -1}, const Vec3& hi = {1, 1, 1}) {
    if (params.spec.k != 3) throw TaskError("precompute_grid: model input must be 3D, got k=" + std::to_string(params.spec.k));
    DenseGrid3 g;
    g.res = res;
    g.lo = lo;
    g.hi = hi;
    for (int a = 0; a < 3; ++a) {
        if (res[a] < 2) throw ConfigError("precompute_grid: resolution must be >= 2 per axis");
    }
    const auto out = evaluate_grid(params, dense_lattice(res, lo, hi));
    g.values = out.template cast<double>().reshaped({res[0], res[1], res[2], out.cols()});
    g.validate();
    return g;
}

/// Trilinear blend of the enclosing cell's corners, written to out[0..O).
/// Points outside the box read as 0.
inline void trilinear(const DenseGrid3& g, const Vec3& p, double* out) {
    const std::size_t o = g.channels();
    std::size_t i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        if (!(p[a] >= g.lo[a] && p[a] <= g.hi[a])) {
            std::fill(out, out + o, 0.0);
            return;
        }
        double u = (p[a] - g.lo[a]) / (g.hi[a] - g.lo[a]) * static_cast<double>(g.res[a] - 1);
        // Lattice coordinates are themselves rounded; snap so nodes read back exactly.
        if (std::abs(u - std::round(u)) < 1e-9) u = std::round(u);
        std::size_t c = static_cast<std::size_t>(std::floor(u));
        if (c >= g.res[a] - 1) c = g.res[a] - 2;
        i0[a] = c;
        f[a] = u - static_cast<double>(c);
    }
    for (std::size_t ch = 0; ch < o; ++ch) {
        double v = 0.0;
        for (int corner = 0; corner < 8; ++corner) {
            const int dx = corner >> 2 & 1, dy = corner >> 1 & 1, dz = corner & 1;
            const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
            if (w != 0.0) v += w * g.at(i0[0] + dx, i0[1] + dy, i0[2] + dz, ch);
        }
        out[ch] = v;
    }
}

inline double trilinear(const DenseGrid3& g, const Vec3& p, std::size_t channel = 0) {
    std::vector<double> v(g.channels());
    trilinear(g, p, v.data());
    return v.at(channel);
}

/// Discrete volume-rendering estimator along one ray:
///   C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i,  T_i = exp(-sum_{j<i} sigma_j delta_j).
struct RayResult {
    double color = 0.0;
    double final_transmittance = 1.0;
    std::vector<double> transmittance;  // T_i per sample
};

inline RayResult accumulate_ray(std::span<const double> sigmas, std::span<const double> deltas,
                            std::span<const double> colors) {
    if (sigmas.size() != deltas.size() || sigmas.size() != colors.size()) {
        throw DimensionError("accumulate: sigma/delta/color lengths differ");
    }
    RayResult r;
    double optical = 0.0;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        const double t = std::exp(-optical);
        r.transmittance.push_back(t);
        const double tau = sigmas[i] * deltas[i];
        const double alpha = std::isinf(tau) ? 1.0 : -std::expm1(-tau);
        r.color += t * alpha * colors[i];
        optical += tau;
    }
    r.final_transmittance = std::exp(-optical);
    return r;
}

/// Pinhole camera looking from origin toward look_at; fov is vertical, degrees.
struct Camera {
    Vec3 origin{0, 0, 3};
    Vec3 look_at{0, 0, 0};
    Vec3 up{0, 1, 0};
    double fov_deg = 40.0;
    std::size_t width = 128;
    std::size_t height = 128;
    double t_near = 1.5;
    double t_far = 4.5;
    std::size_t samples = 128;

    void validate() const {
        if (!(t_near < t_far)) throw ConfigError("camera: near must be < far");
        if (t_near < 0) throw ConfigError("camera: near must be >= 0");
        if (width == 0 || height == 0) throw ConfigError("camera: image size must be positive");
        if (samples == 0) throw ConfigError("camera: samples per ray must be >= 1");
        if (!(fov_deg > 0 && fov_deg < 180)) throw ConfigError("camera: fov must be in (0, 180)");
        const Vec3 fwd = normalized(look_at - origin);
        if (std::abs(std::abs(dot(fwd, normalized(up))) - 1.0) < 1e-12) throw ConfigError("camera: up is parallel to view");
    }

    /// Unit direction through the center of pixel (row, col).
    Vec3 direction(std::size_t row, std::size_t col) const {
        const Vec3 fwd = normalized(look_at - origin);
        const Vec3 right = normalized(cross(fwd, up));
        const Vec3 true_up = cross(right, fwd);
        const double half = std::tan(fov_deg * M_PI / 360.0);
        const double aspect = static_cast<double>(width) / static_cast<double>(height);
        const double x = ((static_cast<double>(col) + 0.5) / static_cast<double>(width) * 2.0 - 1.0) * half * aspect;
        const double y = (1.0 - (static_cast<double>(row) + 0.5) / static_cast<double>(height) * 2.0) * half;
        return normalized(fwd + x * right + y * true_up);
    }
};

struct MarchOptions {
    double sigma_scale = 10.0;  // sigma = scale * sigmoid(logit)
    double albedo = 1.0;
    double background = 0.0;
    bool logits = true;  // false: grid already holds densities
};

inline double sigma_transfer(double v, const MarchOptions& opt) {
    return opt.logits ? opt.sigma_scale / (1.0 + std::exp(-v)) : v;
}

/// n midpoint samples in [t_near, t_far]; pixel value is the estimator plus
/// the background weighted by the leftover transmittance.
inline RayResult march_ray(const std::function<double(const Vec3&)>& sigma, const Vec3& origin, const Vec3& dir,
                           double t_near, double t_far, std::size_t n, double albedo) {
    const double delta = (t_far - t_near) / static_cast<double>(n);
    std::vector<double> s(n), d(n, delta), c(n, albedo);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = t_near + (static_cast<double>(i) + 0.5) * delta;
        s[i] = sigma(origin + t * dir);
    }
    return accumulate_ray(s, d, c);
}

/// Grayscale H x W x 1 image of the first grid channel.
inline Tensor<double> raymarch(const DenseGrid3& g, const Camera& cam, const MarchOptions& opt = {}) {
    g.validate();
    cam.validate();
    Tensor<double> img({cam.height, cam.width, 1});
    auto sigma = [&](const Vec3& p) {
        for (int a = 0; a < 3; ++a) {
            if (!(p[a] >= g.lo[a] && p[a] <= g.hi[a])) return 0.0;
        }
        return sigma_transfer(trilinear(g, p), opt);
    };
    parallel_for(cam.height, 1, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            for (std::size_t c = 0; c < cam.width; ++c) {
                const auto ray = march_ray(sigma, cam.origin, cam.direction(r, c), cam.t_near, cam.t_far, cam.samples,
                                           opt.albedo);
                img(r * cam.width + c, 0) = ray.color + ray.final_transmittance * opt.background;
            }
        }
    });
    return img;
}

/// Points of an axis-aligned res x res slice at `coordinate` along `axis`;
/// image rows follow the lower remaining axis, columns the higher one.
inline Tensor<double> slice_points(int axis, double coordinate, std::size_t res, double lo = -1, double hi = 1) {
    if (axis < 0 || axis > 2) throw ConfigError("slice: axis must be 0, 1 or 2");
    if (res < 2) throw ConfigError("slice: resolution must be >= 2");
    const int a0 = axis == 0 ? 1 : 0, a1 = axis == 2 ? 1 : 2;
    const auto t = linspace(res, lo, hi);
    Tensor<double> pts({res * res, 3});
    for (std::size_t i = 0; i < res; ++i) {
        for (std::size_t j = 0; j < res; ++j) {
            double* p = pts.row(i * res + j);
            p[axis] = coordinate;
            p[a0] = t[i];
            p[a1] = t[j];
        }
    }
    return pts;
}

inline int parse_axis(const std::string& s) {
    if (s == "x" || s == "0") return 0;
    if (s == "y" || s == "1") return 1;
    if (s == "z" || s == "2") return 2;
    throw ConfigError("slice: axis must be x, y or z, got '" + s + "'");
}

/// Field values on a slice, as res x res x 1. `logits` maps through a sigmoid.
inline Tensor<double> slice_image(const std::function<double(const Vec3&)>& field, int axis, double coordinate,
                                  std::size_t res, bool logits = false) {
    const auto pts = slice_points(axis, coordinate, res);
    Tensor<double> img({res, res, 1});
    for (std::size_t p = 0; p < pts.rows(); ++p) {
        const double v = field({pts(p, 0), pts(p, 1), pts(p, 2)});
        img.data()[p] = logits ? 1.0 / (1.0 + std::exp(-v)) : v;
    }
    return img;
}

inline Tensor<double> slice_image(const DenseGrid3& g, int axis, double coordinate, std::size_t res, bool logits = false) {
    g.validate();
    return slice_image([&](const Vec3& p) { return trilinear(g, p); }, axis, coordinate, res, logits);
}

template <class T>
Tensor<double> slice_image(const ModelParams<T>& params, int axis, double coordinate, std::size_t res,
                           bool logits = true) {
    if (params.spec.k != 3) throw TaskError("slice_image: model input must be 3D");
    const auto out = evaluate_points(params, slice_points(axis, coordinate, res)).template cast<double>();
    Tensor<double> img({res, res, 1});
    for (std::size_t p = 0; p < out.rows(); ++p) {
        const double v = out(p, 0);
        img.data()[p] = logits ? 1.0 / (1.0 + std::exp(-v)) : v;
    }
    return img;
}

}  // namespace coordx

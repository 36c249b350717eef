#ifndef CONTOURFIT_GRID_HPP
#define CONTOURFIT_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "contourfit/accum.hpp"
#include "contourfit/errors.hpp"

namespace contourfit {

// ---------------------------------------------------------------------------
// Raster types
//
// Conventions used throughout the library:
//   * pixel (x, y) has its center at real coordinates (x, y); data is
//     row-major, index = y * width + x
//   * level-set fields phi are positive inside a shape, negative outside,
//     with the contour at phi = 0
//   * rotations act on (x, y) with R(kappa) = [[cos, -sin], [sin, cos]]
// ---------------------------------------------------------------------------

/// Dense 2-D raster of real values.
struct Grid2D {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Grid2D() = default;
    Grid2D(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
        if (w <= 0 || h <= 0) throw DimensionError("Grid2D: dimensions must be positive");
    }

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
    bool same_dims(const Grid2D& o) const { return width == o.width && height == o.height; }
};

/// Level-set field; shares the Grid2D layout, documented sign convention above.
using LevelSet = Grid2D;

/// Dense 2-D raster restricted to {0, 1}.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
        if (w <= 0 || h <= 0) throw DimensionError("BinaryMask: dimensions must be positive");
    }

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
    bool same_dims(const BinaryMask& o) const { return width == o.width && height == o.height; }

    std::size_t area() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
};

inline BinaryMask complement(const BinaryMask& m) {
    BinaryMask out = m;
    for (auto& v : out.data) v = v ? 0 : 1;
    return out;
}

/// Map an angle to [0, 2*pi).
inline double normalize_angle(double a) {
    const double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(a, two_pi);
    if (r < 0.0) r += two_pi;
    if (r >= two_pi) r = 0.0;
    return r;
}

/// In-plane rigid transform: translation in pixels, rotation about the
/// window center in radians.
struct AffineParams {
    double tx = 0.0;
    double ty = 0.0;
    double kappa = 0.0;

    AffineParams() = default;
    AffineParams(double tx_, double ty_, double kappa_)
        : tx(tx_), ty(ty_), kappa(normalize_angle(kappa_)) {}
};

enum class SmoothMaxVariant {
    ExpWeightedAverage,
    LogSumExp,
    PNorm,
};

inline const char* to_string(SmoothMaxVariant v) {
    switch (v) {
        case SmoothMaxVariant::ExpWeightedAverage: return "exp-weighted-average";
        case SmoothMaxVariant::LogSumExp: return "log-sum-exp";
        case SmoothMaxVariant::PNorm: return "p-norm";
    }
    return "?";
}

inline SmoothMaxVariant smooth_max_variant_from_string(const std::string& s) {
    if (s == "exp-weighted-average") return SmoothMaxVariant::ExpWeightedAverage;
    if (s == "log-sum-exp") return SmoothMaxVariant::LogSumExp;
    if (s == "p-norm") return SmoothMaxVariant::PNorm;
    throw ArgumentError("unknown smooth-max variant: " + s);
}

/// Steepness / sharpness settings for the smooth surrogates.
struct SmoothParams {
    double delta = 1.0;   // heaviside steepness, in pixels of phi
    double gamma = 10.0;  // smooth-max sharpness
    SmoothMaxVariant variant = SmoothMaxVariant::LogSumExp;
};

// ---------------------------------------------------------------------------
// Smooth Heaviside
// ---------------------------------------------------------------------------

/// Logistic surrogate for the inside-indicator: 1 / (1 + exp(-x/delta)).
inline double smooth_heaviside(double x, double delta) {
    if (delta <= 0.0) throw ArgumentError("smooth_heaviside: delta must be positive");
    const double t = x / delta;
    // evaluate on the non-growing branch so exp never overflows
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

/// d/dx of smooth_heaviside; equals H*(1-H)/delta.
inline double smooth_heaviside_deriv(double x, double delta) {
    const double h = smooth_heaviside(x, delta);
    return h * (1.0 - h) / delta;
}

// ---------------------------------------------------------------------------
// Smooth maximum
// ---------------------------------------------------------------------------

/// Smooth surrogate for max over a non-empty sequence. If `grad` is
/// non-empty it must match `values` in length and receives dS/dx_i.
inline double smooth_max_grad(std::span<const double> values, const SmoothParams& params,
                              std::span<double> grad) {
    if (values.empty()) throw ArgumentError("smooth_max: empty input sequence");
    if (!grad.empty() && grad.size() != values.size())
        throw ArgumentError("smooth_max: gradient span size mismatch");
    if (params.gamma <= 0.0) throw ArgumentError("smooth_max: gamma must be positive");
    const double g = params.gamma;
    const std::size_t n = values.size();
    const double m = *std::max_element(values.begin(), values.end());

    switch (params.variant) {
        case SmoothMaxVariant::LogSumExp: {
            double sum = 0.0;
            for (double v : values) sum += std::exp(g * (v - m));
            const double out = m + std::log(sum) / g;
            if (!grad.empty())
                for (std::size_t i = 0; i < n; ++i) grad[i] = std::exp(g * (values[i] - m)) / sum;
            return out;
        }
        case SmoothMaxVariant::ExpWeightedAverage: {
            double wsum = 0.0, vsum = 0.0;
            for (double v : values) {
                const double w = std::exp(g * (v - m));
                wsum += w;
                vsum += w * v;
            }
            const double out = vsum / wsum;
            if (!grad.empty())
                for (std::size_t i = 0; i < n; ++i) {
                    const double w = std::exp(g * (values[i] - m)) / wsum;
                    grad[i] = w * (1.0 + g * (values[i] - out));
                }
            return out;
        }
        case SmoothMaxVariant::PNorm: {
            for (double v : values)
                if (v < 0.0) throw ArgumentError("smooth_max: p-norm requires non-negative inputs");
            if (m == 0.0) {
                std::fill(grad.begin(), grad.end(), 0.0);
                return 0.0;
            }
            double sum = 0.0;
            for (double v : values) sum += std::pow(v / m, g);
            const double out = m * std::pow(sum, 1.0 / g);
            if (!grad.empty())
                for (std::size_t i = 0; i < n; ++i)
                    grad[i] = values[i] > 0.0 ? std::pow(values[i] / out, g - 1.0) : 0.0;
            return out;
        }
    }
    throw ArgumentError("smooth_max: unknown variant");
}

inline double smooth_max(std::span<const double> values, const SmoothParams& params) {
    return smooth_max_grad(values, params, {});
}

// ---------------------------------------------------------------------------
// Exact Euclidean signed distance
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kDtInf = 1e20;

// 1-D squared-distance transform (lower envelope of parabolas).
inline void dt1d(const double* f, double* d, int n, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kDtInf;
    z[1] = kDtInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kDtInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

// Squared Euclidean distance to the nearest pixel where `feature` is true.
inline std::vector<double> squared_distance_to(const BinaryMask& mask, bool feature) {
    const int w = mask.width, h = mask.height;
    std::vector<double> dist(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        dist[i] = (mask.data[i] != 0) == feature ? 0.0 : kDtInf;

    const int n = std::max(w, h);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);

    // columns
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = dist[static_cast<std::size_t>(y) * w + x];
        dt1d(f.data(), d.data(), h, v.data(), z.data());
        for (int y = 0; y < h; ++y) dist[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    // rows
    for (int y = 0; y < h; ++y) {
        double* row = dist.data() + static_cast<std::size_t>(y) * w;
        std::copy(row, row + w, f.data());
        dt1d(f.data(), d.data(), w, v.data(), z.data());
        std::copy(d.data(), d.data() + w, row);
    }
    return dist;
}

} // namespace detail

/// Exact signed Euclidean distance field of a binary mask.
///
/// phi = +d inside, -d outside, where d is the distance between pixel
/// centers to the nearest opposite-valued pixel; clamped to [-clamp, clamp].
/// A uniform mask yields the constant -clamp (all background) or +clamp.
inline LevelSet signed_distance(const BinaryMask& mask, double clamp) {
    if (mask.width <= 0 || mask.height <= 0 || mask.data.empty())
        throw DimensionError("signed_distance: zero-sized mask");
    if (clamp <= 0.0) throw ArgumentError("signed_distance: clamp must be positive");

    const std::vector<double> d2_to_fg = detail::squared_distance_to(mask, true);
    const std::vector<double> d2_to_bg = detail::squared_distance_to(mask, false);

    LevelSet phi(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.data[i]) {
            phi.data[i] = std::min(clamp, std::sqrt(d2_to_bg[i]));
        } else {
            phi.data[i] = -std::min(clamp, std::sqrt(d2_to_fg[i]));
        }
    }
    return phi;
}

// ---------------------------------------------------------------------------
// Differentiable warping with bilinear sampling
// ---------------------------------------------------------------------------

namespace detail {

// Output pixel x reads src at q(x) = R(-kappa) * (x - pivot_out) + pivot_src.
struct WarpFrame {
    double pivot_out_x = 0.0, pivot_out_y = 0.0;
    double pivot_src_x = 0.0, pivot_src_y = 0.0;
    double kappa = 0.0;
};

struct BilinearSample {
    double value = 0.0;
    double d_qx = 0.0; // d value / d qx
    double d_qy = 0.0;
};

inline BilinearSample sample_bilinear(const Grid2D& g, double qx, double qy, double fill) {
    const int x0 = static_cast<int>(std::floor(qx));
    const int y0 = static_cast<int>(std::floor(qy));
    const double fx = qx - x0;
    const double fy = qy - y0;
    auto fetch = [&](int x, int y) -> double {
        return (x >= 0 && x < g.width && y >= 0 && y < g.height) ? g.at(x, y) : fill;
    };
    const double v00 = fetch(x0, y0), v10 = fetch(x0 + 1, y0);
    const double v01 = fetch(x0, y0 + 1), v11 = fetch(x0 + 1, y0 + 1);
    BilinearSample s;
    s.value = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
    s.d_qx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    s.d_qy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    return s;
}

inline Grid2D warp_frame_forward(const Grid2D& src, const WarpFrame& f, int out_w, int out_h,
                                 double fill) {
    Grid2D out(out_w, out_h);
    const double c = std::cos(f.kappa), s = std::sin(f.kappa);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const double dx = x - f.pivot_out_x;
            const double dy = y - f.pivot_out_y;
            const double qx = c * dx + s * dy + f.pivot_src_x;
            const double qy = -s * dx + c * dy + f.pivot_src_y;
            out.at(x, y) = sample_bilinear(src, qx, qy, fill).value;
        }
    }
    return out;
}

struct WarpFrameGrad {
    Grid2D grad_src;
    double d_pivot_out_x = 0.0, d_pivot_out_y = 0.0;
    double d_pivot_src_x = 0.0, d_pivot_src_y = 0.0;
    double d_kappa = 0.0;
};

// Exact derivatives of sum(upstream . warp_frame_forward(src, f)) w.r.t.
// src and the frame parameters. Corners outside src contribute `fill` to
// the sampled value (and thus to the spatial derivative) but receive no
// src gradient.
inline WarpFrameGrad warp_frame_backward(const Grid2D& src, const WarpFrame& f,
                                         const Grid2D& upstream, double fill) {
    WarpFrameGrad g;
    g.grad_src = Grid2D(src.width, src.height, 0.0);
    const double c = std::cos(f.kappa), s = std::sin(f.kappa);
    // parameter sums run over output pixels; accumulate order-independently
    // so integer scene shifts reproduce them bitwise
    ExactAccumulator a_psx, a_psy, a_pox, a_poy, a_kappa;
    for (int y = 0; y < upstream.height; ++y) {
        for (int x = 0; x < upstream.width; ++x) {
            const double up = upstream.at(x, y);
            if (up == 0.0) continue;
            const double dx = x - f.pivot_out_x;
            const double dy = y - f.pivot_out_y;
            const double qx = c * dx + s * dy + f.pivot_src_x;
            const double qy = -s * dx + c * dy + f.pivot_src_y;
            const BilinearSample smp = sample_bilinear(src, qx, qy, fill);
            const double gx = up * smp.d_qx;
            const double gy = up * smp.d_qy;

            a_psx.add(gx);
            a_psy.add(gy);
            a_pox.add(-c * gx + s * gy);
            a_poy.add(-s * gx - c * gy);
            a_kappa.add(gx * (-s * dx + c * dy) + gy * (-c * dx - s * dy));

            const int x0 = static_cast<int>(std::floor(qx));
            const int y0 = static_cast<int>(std::floor(qy));
            const double fx = qx - x0;
            const double fy = qy - y0;
            auto scatter = [&](int xi, int yi, double w) {
                if (xi >= 0 && xi < src.width && yi >= 0 && yi < src.height)
                    g.grad_src.at(xi, yi) += up * w;
            };
            scatter(x0, y0, (1.0 - fx) * (1.0 - fy));
            scatter(x0 + 1, y0, fx * (1.0 - fy));
            scatter(x0, y0 + 1, (1.0 - fx) * fy);
            scatter(x0 + 1, y0 + 1, fx * fy);
        }
    }
    g.d_pivot_src_x = a_psx.value();
    g.d_pivot_src_y = a_psy.value();
    g.d_pivot_out_x = a_pox.value();
    g.d_pivot_out_y = a_poy.value();
    g.d_kappa = a_kappa.value();
    return g;
}

inline WarpFrame affine_frame(const Grid2D& src, const AffineParams& p) {
    WarpFrame f;
    f.pivot_out_x = 0.5 * (src.width - 1);
    f.pivot_out_y = 0.5 * (src.height - 1);
    f.pivot_src_x = f.pivot_out_x - p.tx;
    f.pivot_src_y = f.pivot_out_y - p.ty;
    f.kappa = p.kappa;
    return f;
}

} // namespace detail

/// Rigid warp of a grid onto itself: rotation by kappa about the window
/// center followed by translation by (tx, ty); bilinear sampling, reads
/// outside src yield `fill`.
inline Grid2D affine_warp(const Grid2D& src, const AffineParams& params, double fill) {
    if (src.width <= 0 || src.height <= 0) throw DimensionError("affine_warp: empty source");
    return detail::warp_frame_forward(src, detail::affine_frame(src, params), src.width,
                                      src.height, fill);
}

struct WarpBackwardResult {
    Grid2D grad_src;
    double d_tx = 0.0;
    double d_ty = 0.0;
    double d_kappa = 0.0;
};

/// Exact partial derivatives of sum(upstream . affine_warp(src, params))
/// with respect to src and (tx, ty, kappa). `fill` must match the forward
/// call.
inline WarpBackwardResult warp_backward(const Grid2D& src, const AffineParams& params,
                                        const Grid2D& upstream, double fill = 0.0) {
    if (!upstream.same_dims(src))
        throw DimensionError("warp_backward: upstream dimensions must match the output");
    const detail::WarpFrameGrad g =
        detail::warp_frame_backward(src, detail::affine_frame(src, params), upstream, fill);
    WarpBackwardResult r;
    r.grad_src = std::move(const_cast<detail::WarpFrameGrad&>(g).grad_src);
    r.d_tx = -g.d_pivot_src_x;
    r.d_ty = -g.d_pivot_src_y;
    r.d_kappa = g.d_kappa;
    return r;
}

/// Place a window field into a larger target raster: target pixel x reads
/// src at R(-kappa) * (x - center) + src_center. Used to position a shape
/// window at an image-space center.
inline Grid2D warp_into(const Grid2D& src, int out_w, int out_h, double center_x, double center_y,
                        double kappa, double fill) {
    detail::WarpFrame f;
    f.pivot_out_x = center_x;
    f.pivot_out_y = center_y;
    f.pivot_src_x = 0.5 * (src.width - 1);
    f.pivot_src_y = 0.5 * (src.height - 1);
    f.kappa = kappa;
    return detail::warp_frame_forward(src, f, out_w, out_h, fill);
}

struct PlaceBackwardResult {
    Grid2D grad_src;
    double d_center_x = 0.0;
    double d_center_y = 0.0;
    double d_kappa = 0.0;
};

/// Derivatives of sum(upstream . warp_into(...)) w.r.t. src, the image-space
/// center, and kappa.
inline PlaceBackwardResult warp_into_backward(const Grid2D& src, const Grid2D& upstream,
                                              double center_x, double center_y, double kappa,
                                              double fill) {
    detail::WarpFrame f;
    f.pivot_out_x = center_x;
    f.pivot_out_y = center_y;
    f.pivot_src_x = 0.5 * (src.width - 1);
    f.pivot_src_y = 0.5 * (src.height - 1);
    f.kappa = kappa;
    detail::WarpFrameGrad g = detail::warp_frame_backward(src, f, upstream, fill);
    PlaceBackwardResult r;
    r.grad_src = std::move(g.grad_src);
    r.d_center_x = g.d_pivot_out_x;
    r.d_center_y = g.d_pivot_out_y;
    r.d_kappa = g.d_kappa;
    return r;
}

/// Parameters of the inverse rigid transform (see affine_warp).
inline AffineParams invert_affine(const AffineParams& p) {
    const double c = std::cos(p.kappa), s = std::sin(p.kappa);
    // composing warp(p) then warp(q) is the identity when q undoes both
    // the rotation and the rotated translation
    return AffineParams(-(c * p.tx - s * p.ty), -(s * p.tx + c * p.ty), -p.kappa);
}

} // namespace contourfit

#endif

#ifndef CONTOURFIT_SYNTH_HPP
#define CONTOURFIT_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/rng.hpp"
#include "contourfit/scene.hpp"

namespace contourfit {

// ---------------------------------------------------------------------------
// Irregular blob shapes: star-shaped regions with random harmonic radii
// ---------------------------------------------------------------------------

struct BlobParams {
    double base_radius = 12.0;
    int n_harmonics = 5;
    double harmonic_amp = 0.3; // total amplitude bound, must stay below 1
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (base_radius < 1.0) throw ArgumentError("blob: base radius too small");
        if (n_harmonics < 0) throw ArgumentError("blob: harmonic count negative");
        if (harmonic_amp < 0.0 || harmonic_amp >= 1.0)
            throw ArgumentError("blob: harmonic amplitude must lie in [0, 1)");
    }
};

namespace detail {

struct BlobOutline {
    double base = 0.0;
    std::vector<double> amp, phase; // per harmonic (order h = index + 1)

    double radius(double theta) const {
        double r = 1.0;
        for (std::size_t h = 0; h < amp.size(); ++h)
            r += amp[h] * std::cos((static_cast<double>(h) + 1.0) * theta + phase[h]);
        return base * r;
    }
};

inline BlobOutline sample_outline(const BlobParams& params, Rng& rng) {
    BlobOutline o;
    o.base = params.base_radius;
    o.amp.resize(params.n_harmonics);
    o.phase.resize(params.n_harmonics);
    // per-harmonic amplitudes bounded so the radius cannot reach zero
    const double bound = params.n_harmonics > 0 ? params.harmonic_amp / params.n_harmonics : 0.0;
    for (int h = 0; h < params.n_harmonics; ++h) {
        o.amp[h] = rng.uniform(-bound, bound);
        o.phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return o;
}

inline void rasterize_outline(const BlobOutline& o, double cx, double cy, BinaryMask& mask) {
    const double reach = o.base * 2.0; // conservative bound on the radius
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int x1 = std::min(mask.width - 1, static_cast<int>(std::ceil(cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(mask.height - 1, static_cast<int>(std::ceil(cy + reach)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double r = std::sqrt(dx * dx + dy * dy);
            if (r <= o.radius(std::atan2(dy, dx))) mask.at(x, y) = 1;
        }
}

// integer re-centering so the centroid sits within half a pixel of the
// window center on both axes
inline BinaryMask center_mask(const BinaryMask& mask) {
    double sx = 0.0, sy = 0.0, n = 0.0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
                n += 1.0;
            }
    if (n == 0.0) throw GenerationError("blob rasterized to an empty mask");
    const int shift_x = static_cast<int>(std::lround(sx / n - 0.5 * (mask.width - 1)));
    const int shift_y = static_cast<int>(std::lround(sy / n - 0.5 * (mask.height - 1)));
    if (shift_x == 0 && shift_y == 0) return mask;
    BinaryMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            const int nx = x - shift_x, ny = y - shift_y;
            if (nx < 0 || nx >= mask.width || ny < 0 || ny >= mask.height)
                throw GenerationError("blob does not fit its window after centering");
            out.at(nx, ny) = 1;
        }
    return out;
}

} // namespace detail

/// Rasterize one random star-shaped blob, centered in the window.
inline BinaryMask gen_blob(const BlobParams& params, int width, int height) {
    params.validate();
    const double max_radius = params.base_radius * (1.0 + params.harmonic_amp);
    if (2.0 * max_radius + 2.0 > std::min(width, height))
        throw ArgumentError("gen_blob: blob cannot fit the window");
    Rng rng(params.rng_seed);
    const detail::BlobOutline outline = detail::sample_outline(params, rng);
    BinaryMask mask(width, height);
    detail::rasterize_outline(outline, 0.5 * (width - 1), 0.5 * (height - 1), mask);
    return detail::center_mask(mask);
}

// ---------------------------------------------------------------------------
// Synthetic scenes with ground truth
// ---------------------------------------------------------------------------

struct SceneTruth {
    std::vector<BinaryMask> gt_masks; // pairwise disjoint, image-sized
    std::vector<Grid2D> p_sem;        // background + foreground
    std::vector<Detection> detections;
    int image_size = 0;
};

struct SceneGenParams {
    int n_shapes = 4;
    BlobParams blob;
    double overlap_target = 0.0; // 0 = tangent spacing, higher = closer centers
    double noise_level = 0.1;    // gaussian sigma added to the foreground probability
    double jitter = 2.0;         // detection center jitter, per axis, pixels
    int image_size = 128;
    std::uint64_t seed = 0;
};

/// Generate a multi-instance scene: blobs dropped with controlled
/// adjacency, overlaps resolved into disjoint ground truth by per-pixel
/// argmax of the per-blob signed-distance fields; the foreground
/// probability is the noisy union clamped to [0.02, 0.98]; detections are
/// jittered centroids with 10 %-dilated boxes.
inline SceneTruth gen_scene(const SceneGenParams& params) {
    params.blob.validate();
    if (params.n_shapes < 1) throw ArgumentError("gen_scene: need at least one shape");
    Rng rng(params.seed);
    const int s = params.image_size;
    const double max_radius = params.blob.base_radius * (1.0 + params.blob.harmonic_amp);
    const double margin = max_radius + params.jitter + 2.0;
    if (2.0 * margin >= s) throw ArgumentError("gen_scene: shapes do not fit the image");

    // drop centers with a minimum spacing shrunk by the overlap target
    const double min_dist = 2.0 * params.blob.base_radius * (1.0 - params.overlap_target);
    std::vector<std::array<double, 2>> centers;
    for (int i = 0; i < params.n_shapes; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
            const double cx = rng.uniform(margin, s - margin);
            const double cy = rng.uniform(margin, s - margin);
            bool ok = true;
            for (const auto& c : centers) {
                const double d = std::hypot(cx - c[0], cy - c[1]);
                if (d < std::max(min_dist, 1.0)) ok = false;
            }
            if (ok) {
                centers.push_back({cx, cy});
                placed = true;
            }
        }
        if (!placed) throw GenerationError("gen_scene: could not place all shapes");
    }

    // rasterize each blob on the image and resolve overlaps by depth
    std::vector<BinaryMask> raw(params.n_shapes, BinaryMask(s, s));
    for (int i = 0; i < params.n_shapes; ++i) {
        BlobParams bp = params.blob;
        bp.rng_seed = rng.derive(static_cast<std::uint64_t>(i) + 1);
        Rng blob_rng(bp.rng_seed);
        const detail::BlobOutline outline = detail::sample_outline(bp, blob_rng);
        detail::rasterize_outline(outline, centers[i][0], centers[i][1], raw[i]);
        if (raw[i].area() == 0) throw GenerationError("gen_scene: degenerate blob");
    }
    std::vector<LevelSet> depth;
    depth.reserve(params.n_shapes);
    for (const BinaryMask& m : raw) depth.push_back(signed_distance(m, static_cast<double>(s)));

    SceneTruth truth;
    truth.image_size = s;
    truth.gt_masks.assign(params.n_shapes, BinaryMask(s, s));
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            int best = -1;
            double best_d = 0.0;
            for (int i = 0; i < params.n_shapes; ++i) {
                if (!raw[i].at(x, y)) continue;
                const double d = depth[i].at(x, y);
                if (best == -1 || d > best_d) {
                    best = i;
                    best_d = d;
                }
            }
            if (best >= 0) truth.gt_masks[best].at(x, y) = 1;
        }

    // noisy semantic probability
    Grid2D fg(s, s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double v = 0.0;
            for (const BinaryMask& m : truth.gt_masks)
                if (m.at(x, y)) v = 1.0;
            if (params.noise_level > 0.0) v += rng.normal(0.0, params.noise_level);
            fg.at(x, y) = std::clamp(v, 0.02, 0.98);
        }
    Grid2D bg(s, s);
    for (std::size_t i = 0; i < fg.size(); ++i) bg.data[i] = 1.0 - fg.data[i];
    truth.p_sem = {std::move(bg), std::move(fg)};

    // detections: jittered centroids, 10 %-dilated boxes
    for (int i = 0; i < params.n_shapes; ++i) {
        const BinaryMask& m = truth.gt_masks[i];
        if (m.area() == 0) throw GenerationError("gen_scene: a shape was fully occluded");
        double sx = 0.0, sy = 0.0, cnt = 0.0;
        int bx0 = s, by0 = s, bx1 = -1, by1 = -1;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                if (m.at(x, y)) {
                    sx += x;
                    sy += y;
                    cnt += 1.0;
                    bx0 = std::min(bx0, x);
                    by0 = std::min(by0, y);
                    bx1 = std::max(bx1, x);
                    by1 = std::max(by1, y);
                }
        Detection det;
        det.class_id = 1;
        det.cx = std::clamp(sx / cnt + rng.uniform(-params.jitter, params.jitter), 0.0,
                            static_cast<double>(s - 1));
        det.cy = std::clamp(sy / cnt + rng.uniform(-params.jitter, params.jitter), 0.0,
                            static_cast<double>(s - 1));
        const double dw = 0.05 * (bx1 - bx0 + 1), dh = 0.05 * (by1 - by0 + 1);
        det.x0 = std::max(0.0, bx0 - dw);
        det.y0 = std::max(0.0, by0 - dh);
        det.x1 = std::min(static_cast<double>(s - 1), bx1 + dw);
        det.y1 = std::min(static_cast<double>(s - 1), by1 + dh);
        truth.detections.push_back(det);
    }
    return truth;
}

/// Bundle a generated scene as segmentation inputs.
inline SceneFile scene_file_from_truth(const SceneTruth& truth, int window_size,
                                       const EnergyWeights& weights, const SmoothParams& smooth,
                                       double loc_sigma) {
    SceneFile f;
    f.inputs.class_names = {"background", "object"};
    f.inputs.p_sem = truth.p_sem;
    f.inputs.detections = truth.detections;
    f.inputs.window_sizes = {0, window_size};
    f.weights = weights;
    f.smooth = smooth;
    f.loc_sigma = loc_sigma;
    return f;
}

} // namespace contourfit

#endif

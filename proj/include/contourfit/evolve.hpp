#ifndef CONTOURFIT_EVOLVE_HPP
#define CONTOURFIT_EVOLVE_HPP

#include <cmath>
#include <numbers>
#include <vector>

#include "contourfit/decoder.hpp"
#include "contourfit/energy.hpp"
#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/lbfgs.hpp"
#include "contourfit/scene.hpp"
#include "contourfit/shape_model.hpp"

namespace contourfit {

struct InitConfig {
    bool use_rotation_init = false;
    double delta_kappa = std::numbers::pi / 12.0; // 15 degrees
    int min_init_pixels = 10;
    double rot_prior_weight = 1.0;
    double rot_recon_weight = 1.0;

    void validate() const {
        if (!(delta_kappa > 0.0) || delta_kappa > std::numbers::pi / 2.0)
            throw ArgumentError("init: delta_kappa must lie in (0, pi/2]");
    }
};

struct EvolveConfig {
    int max_iterations = 500;
    double grad_tolerance = 1e-5;
    int lbfgs_memory = 10;
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    double empty_shape_area_threshold = 10.0;
};

struct SegmentationResult {
    std::vector<BinaryMask> masks; // per shape, zeroed when pruned; pairwise disjoint
    std::vector<ShapeState> states;
    std::vector<bool> pruned;
    std::vector<double> trace; // energy at entry and after each accepted step
    LbfgsStatus status = LbfgsStatus::Converged;
    int iterations = 0;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

/// Rotate a mask about the window center (bilinear, re-thresholded at 0.5).
inline BinaryMask rotate_mask(const BinaryMask& mask, double kappa) {
    Grid2D g(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.size(); ++i) g.data[i] = mask.data[i] ? 1.0 : 0.0;
    const Grid2D r = affine_warp(g, AffineParams(0.0, 0.0, kappa), 0.0);
    BinaryMask out(mask.width, mask.height);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = r.data[i] >= 0.5 ? 1 : 0;
    return out;
}

inline double mask_round_trip_bce(const BinaryMask& target, const LevelSet& phi, double delta) {
    double e = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double p = detail::clamp_prob(smooth_heaviside(phi.data[i], delta));
        e -= target.data[i] ? std::log(p) : std::log(1.0 - p);
    }
    return e;
}

} // namespace detail

/// Grid search for the initial rotation: minimizes the orientation
/// negative log-prior plus the encode/decode round-trip reconstruction
/// error of the rotated window mask, over kappa in {0, dk, 2dk, ...};
/// ties resolve to the smallest kappa.
inline double init_rotation(const BinaryMask& m_init, const KpcaModel& kpca,
                            const DecoderWeights& decoder, const OrientationModel& orientation,
                            const InitConfig& cfg, const SmoothParams& smooth) {
    cfg.validate();
    double best_kappa = 0.0;
    double best_e = std::numeric_limits<double>::infinity();
    for (double kappa = 0.0; kappa < 2.0 * std::numbers::pi - 1e-12; kappa += cfg.delta_kappa) {
        const BinaryMask rotated = detail::rotate_mask(m_init, kappa);
        const ShapeCode alpha = encode(kpca, rotated);
        const LevelSet phi = decode(decoder, alpha);
        const double e = -cfg.rot_prior_weight * orientation.log_density(kappa) +
                         cfg.rot_recon_weight *
                             detail::mask_round_trip_bce(rotated, phi, smooth.delta);
        if (e < best_e) {
            best_e = e;
            best_kappa = kappa;
        }
    }
    return best_kappa;
}

/// Build one state per detection: the initial window mask is the bbox
/// intersected with the pixels whose dominant semantic class matches the
/// detection, cropped to the class window around the detection center;
/// its projection onto the shape model seeds alpha. Detections whose
/// window mask is smaller than min_init_pixels fall back to the mean
/// shape (alpha = 0).
inline std::vector<ShapeState> initialize_states(const SceneInputs& inputs, const KpcaModel& kpca,
                                                 const DecoderWeights& decoder,
                                                 const InitConfig& cfg,
                                                 const OrientationModel& orientation = {},
                                                 const SmoothParams& smooth = {}) {
    inputs.validate();
    const int img_w = inputs.image_width(), img_h = inputs.image_height();
    const int n_class = static_cast<int>(inputs.p_sem.size());

    std::vector<ShapeState> states;
    states.reserve(inputs.detections.size());
    for (const Detection& det : inputs.detections) {
        const int d = inputs.window_sizes[det.class_id];
        if (d != kpca.dim_w || d != kpca.dim_h)
            throw DimensionError("initialize_states: window size does not match the shape model");
        const double half = 0.5 * (d - 1);
        const int ox = static_cast<int>(std::lround(det.cx - half));
        const int oy = static_cast<int>(std::lround(det.cy - half));

        BinaryMask m_init(d, d);
        std::size_t set_count = 0;
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < d; ++i) {
                const int px = ox + i, py = oy + j;
                if (px < 0 || px >= img_w || py < 0 || py >= img_h) continue;
                if (px < det.x0 || px > det.x1 || py < det.y0 || py > det.y1) continue;
                int arg = 0;
                double best = inputs.p_sem[0].at(px, py);
                for (int c = 1; c < n_class; ++c)
                    if (inputs.p_sem[c].at(px, py) > best) {
                        best = inputs.p_sem[c].at(px, py);
                        arg = c;
                    }
                if (arg == det.class_id) {
                    m_init.at(i, j) = 1;
                    ++set_count;
                }
            }

        ShapeState st;
        st.cx = det.cx;
        st.cy = det.cy;
        st.class_id = det.class_id;
        st.kappa = 0.0;
        if (set_count < static_cast<std::size_t>(cfg.min_init_pixels)) {
            st.alpha.assign(kpca.c, 0.0);
        } else {
            if (cfg.use_rotation_init) {
                st.kappa = init_rotation(m_init, kpca, decoder, orientation, cfg, smooth);
                st.alpha = encode(kpca, detail::rotate_mask(m_init, st.kappa));
            } else {
                st.alpha = encode(kpca, m_init);
            }
        }
        states.push_back(std::move(st));
    }
    return states;
}

// ---------------------------------------------------------------------------
// Mask extraction
// ---------------------------------------------------------------------------

/// Assign each pixel to the shape with the largest field value among those
/// with h >= 0.5 (ties to the lower shape index); shapes whose resulting
/// mask falls below the area threshold are pruned and their mask dropped.
inline void extract_instance_masks(SegmentationResult& result, const SceneModels& models,
                                   const SceneInputs& inputs, const SmoothParams& smooth,
                                   const EvolveConfig& cfg) {
    const int img_w = inputs.image_width(), img_h = inputs.image_height();
    const int n = static_cast<int>(result.states.size());
    const std::vector<Grid2D> fields =
        composite_field(result.states, *models.decoder, smooth, img_w, img_h);

    result.masks.assign(n, BinaryMask(img_w, img_h));
    result.pruned.assign(n, false);
    for (int y = 0; y < img_h; ++y)
        for (int x = 0; x < img_w; ++x) {
            int best = -1;
            double best_v = 0.0;
            for (int i = 0; i < n; ++i) {
                const double v = fields[i].at(x, y);
                if (v < 0.5) continue; // not a candidate
                if (best == -1 || v > best_v) {
                    best = i;
                    best_v = v;
                }
            }
            if (best >= 0) result.masks[best].at(x, y) = 1;
        }
    for (int i = 0; i < n; ++i) {
        if (static_cast<double>(result.masks[i].area()) < cfg.empty_shape_area_threshold) {
            result.pruned[i] = true;
            std::fill(result.masks[i].data.begin(), result.masks[i].data.end(), 0);
        }
    }
}

// ---------------------------------------------------------------------------
// Joint evolution
// ---------------------------------------------------------------------------

/// Minimize the total scene energy over all shape parameters jointly.
/// Shape codes are preconditioned by models.alpha_scale (if set) so the
/// mixed-unit parameter vector stays well conditioned. Deterministic; a
/// line-search failure returns the best state reached with a status flag.
inline SegmentationResult run_evolution(std::vector<ShapeState> states, const SceneModels& models,
                                        const SceneInputs& inputs, const EnergyWeights& weights,
                                        const SmoothParams& smooth, const EvolveConfig& cfg) {
    inputs.validate();
    const int n = static_cast<int>(states.size());
    const InteractionGraph graph =
        build_interaction_graph(inputs.detections, models.location, inputs.window_sizes);

    const int c = n > 0 ? static_cast<int>(states[0].alpha.size()) : 0;
    for (const ShapeState& st : states)
        if (static_cast<int>(st.alpha.size()) != c)
            throw DimensionError("run_evolution: code lengths differ between shapes");
    std::vector<double> scale(c, 1.0);
    if (!models.alpha_scale.empty()) {
        if (static_cast<int>(models.alpha_scale.size()) != c)
            throw DimensionError("run_evolution: alpha_scale length mismatch");
        scale = models.alpha_scale;
    }

    const int per = 3 + c;
    std::vector<double> x(static_cast<std::size_t>(n) * per);
    for (int i = 0; i < n; ++i) {
        x[i * per + 0] = states[i].cx;
        x[i * per + 1] = states[i].cy;
        x[i * per + 2] = states[i].kappa;
        for (int k = 0; k < c; ++k) x[i * per + 3 + k] = states[i].alpha[k] / scale[k];
    }

    std::vector<ShapeState> work = states;
    std::vector<StateGrad> sg;
    auto objective = [&](const std::vector<double>& z, std::vector<double>& grad) -> double {
        for (int i = 0; i < n; ++i) {
            work[i].cx = z[i * per + 0];
            work[i].cy = z[i * per + 1];
            work[i].kappa = z[i * per + 2];
            for (int k = 0; k < c; ++k) work[i].alpha[k] = z[i * per + 3 + k] * scale[k];
        }
        const EnergyReport rep =
            total_energy_and_grad(work, models, inputs, graph, weights, smooth, &sg);
        for (int i = 0; i < n; ++i) {
            grad[i * per + 0] = sg[i].d_cx;
            grad[i * per + 1] = sg[i].d_cy;
            grad[i * per + 2] = sg[i].d_kappa;
            for (int k = 0; k < c; ++k) grad[i * per + 3 + k] = sg[i].d_alpha[k] * scale[k];
        }
        return rep.total;
    };

    LbfgsOptions opt;
    opt.memory = cfg.lbfgs_memory;
    opt.max_iterations = cfg.max_iterations;
    opt.grad_tolerance = cfg.grad_tolerance;
    opt.wolfe_c1 = cfg.wolfe_c1;
    opt.wolfe_c2 = cfg.wolfe_c2;
    const LbfgsResult lr = lbfgs_minimize(objective, x, opt);

    SegmentationResult result;
    result.states = std::move(states);
    for (int i = 0; i < n; ++i) {
        result.states[i].cx = lr.x[i * per + 0];
        result.states[i].cy = lr.x[i * per + 1];
        result.states[i].kappa = normalize_angle(lr.x[i * per + 2]);
        for (int k = 0; k < c; ++k) result.states[i].alpha[k] = lr.x[i * per + 3 + k] * scale[k];
    }
    result.trace = lr.trace;
    result.status = lr.status;
    result.iterations = lr.iterations;
    extract_instance_masks(result, models, inputs, smooth, cfg);
    return result;
}

} // namespace contourfit

#endif

#ifndef CONTOURFIT_ENERGY_HPP
#define CONTOURFIT_ENERGY_HPP

#include <cmath>
#include <vector>

#include "contourfit/decoder.hpp"
#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/scene.hpp"
#include "contourfit/shape_model.hpp"

namespace contourfit {

inline constexpr double kProbClamp = 1e-6; // probabilities clamped before logs

/// Models consulted by the energy besides the scene inputs.
struct SceneModels {
    const DecoderWeights* decoder = nullptr;
    const KdePrior* shape_prior = nullptr;
    LocationModel location;
    OrientationModel orientation;
    // per-component preconditioner for the shape codes during evolution
    // (typically sqrt of the model eigenvalues); empty = unscaled
    std::vector<double> alpha_scale;
};

// ---------------------------------------------------------------------------
// Composite fields
// ---------------------------------------------------------------------------

/// Per-shape soft membership field in image coordinates: the decoded
/// window is pushed through the smooth Heaviside, then rotated about the
/// detection window center and placed at the shape center (fill 0).
/// Windows reaching past the image border are cropped at the edge.
inline std::vector<Grid2D> composite_field(const std::vector<ShapeState>& states,
                                           const DecoderWeights& decoder,
                                           const SmoothParams& smooth, int image_w, int image_h) {
    std::vector<Grid2D> fields;
    fields.reserve(states.size());
    for (const ShapeState& st : states) {
        LevelSet phi = decode(decoder, st.alpha);
        for (double& v : phi.data) v = smooth_heaviside(v, smooth.delta);
        fields.push_back(warp_into(phi, image_w, image_h, st.cx, st.cy, st.kappa, 0.0));
    }
    return fields;
}

namespace detail {

inline double clamp_prob(double p) {
    return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Image term
// ---------------------------------------------------------------------------

/// Binary cross-entropy between the smooth-max union of the fields and the
/// foreground probability grid. With no shapes the union is identically 0.
/// When `upstream` is non-null, dE/dh_i is accumulated into it (same
/// layout as `fields`).
inline double image_energy_single_class(const std::vector<Grid2D>& fields, const Grid2D& p_fg,
                                        const SmoothParams& smooth,
                                        std::vector<Grid2D>* upstream = nullptr) {
    const int n = static_cast<int>(fields.size());
    for (const Grid2D& h : fields)
        if (!h.same_dims(p_fg)) throw DimensionError("image energy: field dimensions differ");

    ExactAccumulator energy; // order-independent: invariant to scene shifts
    std::vector<double> vals(n), grads(n);
    for (std::size_t pix = 0; pix < p_fg.size(); ++pix) {
        const double p = detail::clamp_prob(p_fg.data[pix]);
        double s = 0.0;
        if (n > 0) {
            for (int i = 0; i < n; ++i) vals[i] = fields[i].data[pix];
            s = smooth_max_grad(vals, smooth, grads);
        }
        energy.add(-(s * std::log(p) + (1.0 - s) * std::log(1.0 - p)));
        if (upstream && n > 0) {
            const double de_ds = -std::log(p / (1.0 - p));
            for (int i = 0; i < n; ++i) (*upstream)[i].data[pix] += de_ds * grads[i];
        }
    }
    return energy.value();
}

/// Multi-class cross-entropy of the normalized class membership
/// pseudoprobabilities: per foreground class the smooth-max over its
/// shapes, background membership 1 minus the smooth-max over all shapes.
/// `class_ids` gives each field's class (1-based; 0 is background).
inline double image_energy_multi_class(const std::vector<Grid2D>& fields,
                                       const std::vector<int>& class_ids,
                                       const std::vector<Grid2D>& p_sem,
                                       const SmoothParams& smooth,
                                       std::vector<Grid2D>* upstream = nullptr) {
    const int n_class = static_cast<int>(p_sem.size()); // includes background
    if (n_class < 3) throw ArgumentError("multi-class image energy needs >= 2 foreground classes");
    const int n = static_cast<int>(fields.size());
    if (static_cast<int>(class_ids.size()) != n)
        throw ArgumentError("image energy: class id per field required");
    for (const Grid2D& h : fields)
        if (!h.same_dims(p_sem.front()))
            throw DimensionError("image energy: field dimensions differ");

    // shapes grouped by class
    std::vector<std::vector<int>> by_class(n_class);
    for (int i = 0; i < n; ++i) {
        if (class_ids[i] < 1 || class_ids[i] >= n_class)
            throw ArgumentError("image energy: field class out of range");
        by_class[class_ids[i]].push_back(i);
    }

    ExactAccumulator energy;
    std::vector<double> s(n_class), de_ds(n_class);
    std::vector<double> vals, grads;
    std::vector<double> all_vals(n), all_grads(n);
    for (std::size_t pix = 0; pix < p_sem.front().size(); ++pix) {
        // class memberships
        for (int c = 1; c < n_class; ++c) {
            const auto& idx = by_class[c];
            if (idx.empty()) {
                s[c] = 0.0;
                continue;
            }
            vals.resize(idx.size());
            for (std::size_t k = 0; k < idx.size(); ++k) vals[k] = fields[idx[k]].data[pix];
            s[c] = smooth_max(vals, smooth);
        }
        double s_all = 0.0;
        if (n > 0) {
            for (int i = 0; i < n; ++i) all_vals[i] = fields[i].data[pix];
            s_all = upstream ? smooth_max_grad(all_vals, smooth, all_grads)
                             : smooth_max(all_vals, smooth);
        }
        s[0] = 1.0 - s_all;

        double total = 0.0;
        for (int c = 0; c < n_class; ++c) total += s[c];
        double weighted = 0.0; // sum_c s_c * log p_c
        for (int c = 0; c < n_class; ++c) {
            const double lp = std::log(detail::clamp_prob(p_sem[c].data[pix]));
            weighted += s[c] * lp;
            de_ds[c] = lp;
        }
        energy.add(-weighted / total);

        if (upstream && n > 0) {
            // dE/ds_c = -(log p_c)/T + weighted/T^2
            for (int c = 0; c < n_class; ++c)
                de_ds[c] = -de_ds[c] / total + weighted / (total * total);
            // background couples every shape through s_all
            for (int i = 0; i < n; ++i)
                (*upstream)[i].data[pix] += de_ds[0] * (-all_grads[i]);
            for (int c = 1; c < n_class; ++c) {
                const auto& idx = by_class[c];
                if (idx.empty()) continue;
                vals.resize(idx.size());
                grads.resize(idx.size());
                for (std::size_t k = 0; k < idx.size(); ++k) vals[k] = fields[idx[k]].data[pix];
                smooth_max_grad(vals, smooth, grads);
                for (std::size_t k = 0; k < idx.size(); ++k)
                    (*upstream)[idx[k]].data[pix] += de_ds[c] * grads[k];
            }
        }
    }
    return energy.value();
}

// ---------------------------------------------------------------------------
// Prior term
// ---------------------------------------------------------------------------

struct PriorBreakdown {
    double shape = 0.0;
    double location = 0.0;
    double orientation = 0.0;
    double overlap = 0.0;
    double total() const { return shape + location + orientation + overlap; }
};

/// Weighted prior energy: negative shape/location/orientation log-priors
/// plus the pairwise overlap penalty summed over graph edges (the overlap
/// integral is the pixel sum of the field product).
inline PriorBreakdown prior_energy(const std::vector<ShapeState>& states, const SceneModels& models,
                                   const InteractionGraph& graph,
                                   const std::vector<Grid2D>& fields,
                                   const EnergyWeights& weights) {
    PriorBreakdown e;
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (weights.gamma_shp != 0.0)
            e.shape -= weights.gamma_shp *
                       kde_log_prior(*models.shape_prior, states[i].alpha).value;
        if (weights.gamma_loc != 0.0)
            e.location -= weights.gamma_loc * models.location.log_density(
                                                  static_cast<int>(i), states[i].cx, states[i].cy);
        if (weights.gamma_ori != 0.0)
            e.orientation -= weights.gamma_ori * models.orientation.log_density(states[i].kappa);
    }
    if (weights.gamma_ovp != 0.0)
        for (const auto& [a, b] : graph.edges) {
            ExactAccumulator dot;
            for (std::size_t p = 0; p < fields[a].size(); ++p)
                dot.add(fields[a].data[p] * fields[b].data[p]);
            e.overlap += weights.gamma_ovp * dot.value();
        }
    return e;
}

// ---------------------------------------------------------------------------
// Total energy and gradient
// ---------------------------------------------------------------------------

struct StateGrad {
    double d_cx = 0.0, d_cy = 0.0, d_kappa = 0.0;
    std::vector<double> d_alpha;
};

struct EnergyReport {
    double total = 0.0;
    double image = 0.0;
    PriorBreakdown prior;
};

/// Evaluate the full scene energy; when `grads` is non-null the exact
/// gradient with respect to every state parameter is written there
/// (reverse-mode through smooth-max, Heaviside, warp, and decoder; the
/// overlap term only couples graph edges).
inline EnergyReport total_energy_and_grad(const std::vector<ShapeState>& states,
                                          const SceneModels& models, const SceneInputs& inputs,
                                          const InteractionGraph& graph,
                                          const EnergyWeights& weights, const SmoothParams& smooth,
                                          std::vector<StateGrad>* grads = nullptr) {
    const int img_w = inputs.image_width(), img_h = inputs.image_height();
    const int n = static_cast<int>(states.size());

    // forward: decoded windows, heaviside windows, placed fields
    std::vector<LevelSet> phis(n);
    std::vector<Grid2D> windows(n);
    std::vector<Grid2D> fields(n);
    for (int i = 0; i < n; ++i) {
        phis[i] = decode(*models.decoder, states[i].alpha);
        windows[i] = phis[i];
        for (double& v : windows[i].data) v = smooth_heaviside(v, smooth.delta);
        fields[i] = warp_into(windows[i], img_w, img_h, states[i].cx, states[i].cy,
                              states[i].kappa, 0.0);
    }

    std::vector<Grid2D> upstream;
    if (grads) upstream.assign(n, Grid2D(img_w, img_h, 0.0));
    std::vector<Grid2D>* up = grads ? &upstream : nullptr;

    EnergyReport report;
    if (inputs.foreground_classes() == 1) {
        report.image = image_energy_single_class(fields, inputs.p_sem[1], smooth, up);
    } else {
        std::vector<int> class_ids(n);
        for (int i = 0; i < n; ++i) class_ids[i] = states[i].class_id;
        report.image = image_energy_multi_class(fields, class_ids, inputs.p_sem, smooth, up);
    }

    report.prior = prior_energy(states, models, graph, fields, weights);
    report.total = report.image + report.prior.total();
    if (!grads) return report;

    // overlap upstream: gamma_ovp * h_other on every edge
    if (weights.gamma_ovp != 0.0)
        for (const auto& [a, b] : graph.edges)
            for (std::size_t p = 0; p < fields[a].size(); ++p) {
                upstream[a].data[p] += weights.gamma_ovp * fields[b].data[p];
                upstream[b].data[p] += weights.gamma_ovp * fields[a].data[p];
            }

    grads->assign(n, StateGrad{});
    for (int i = 0; i < n; ++i) {
        StateGrad& g = (*grads)[i];
        g.d_alpha.assign(states[i].alpha.size(), 0.0);

        PlaceBackwardResult pb = warp_into_backward(windows[i], upstream[i], states[i].cx,
                                                    states[i].cy, states[i].kappa, 0.0);
        g.d_cx = pb.d_center_x;
        g.d_cy = pb.d_center_y;
        g.d_kappa = pb.d_kappa;

        // through the heaviside into the decoded window
        Grid2D d_phi = std::move(pb.grad_src);
        for (std::size_t p = 0; p < d_phi.size(); ++p)
            d_phi.data[p] *= smooth_heaviside_deriv(phis[i].data[p], smooth.delta);
        DecodeBackwardResult db = decode_backward(*models.decoder, states[i].alpha, d_phi, false);
        for (std::size_t k = 0; k < db.grad_alpha.size(); ++k) g.d_alpha[k] += db.grad_alpha[k];

        // priors
        if (weights.gamma_shp != 0.0) {
            const LogPriorValue lp = kde_log_prior(*models.shape_prior, states[i].alpha);
            for (std::size_t k = 0; k < lp.grad.size(); ++k)
                g.d_alpha[k] -= weights.gamma_shp * lp.grad[k];
        }
        if (weights.gamma_loc != 0.0) {
            double gx = 0.0, gy = 0.0;
            models.location.grad(i, states[i].cx, states[i].cy, gx, gy);
            g.d_cx -= weights.gamma_loc * gx;
            g.d_cy -= weights.gamma_loc * gy;
        }
        if (weights.gamma_ori != 0.0)
            g.d_kappa -= weights.gamma_ori * models.orientation.grad(states[i].kappa);
    }
    return report;
}

} // namespace contourfit

#endif

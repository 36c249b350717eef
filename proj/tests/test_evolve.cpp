#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "contourfit/decoder.hpp"
#include "contourfit/energy.hpp"
#include "contourfit/evolve.hpp"
#include "contourfit/metrics.hpp"
#include "contourfit/rng.hpp"
#include "contourfit/shape_model.hpp"
#include "contourfit/synth.hpp"
#include "support/oracles.hpp"

using namespace contourfit;
using Catch::Approx;

namespace {

struct Fixture {
    KpcaModel kpca;
    KdePrior prior;
    DecoderWeights decoder;
    int window = 0;
};

Fixture make_fixture(std::uint64_t seed, int window, int n_train, int c, double radius,
                     double amp) {
    Fixture f;
    f.window = window;
    TrainingShapeSet shapes;
    Rng rng(seed);
    for (int i = 0; i < n_train; ++i) {
        BlobParams bp;
        bp.base_radius = radius;
        bp.harmonic_amp = amp;
        bp.rng_seed = rng.derive(i + 1);
        shapes.masks.push_back(gen_blob(bp, window, window));
    }
    f.kpca = fit_kpca(shapes, ShapeKernelSpec{}, c);
    std::vector<ShapeCode> codes;
    for (auto& [m, code] : encode_training_set(f.kpca)) codes.push_back(code);
    f.prior = fit_kde(codes);
    f.decoder = linear_decoder_from_kpca(f.kpca);
    return f;
}

SceneModels models_for(const Fixture& f, const SceneInputs& inputs, double sigma_loc) {
    SceneModels m;
    m.decoder = &f.decoder;
    m.shape_prior = &f.prior;
    m.location.sigma_loc = sigma_loc;
    for (const Detection& d : inputs.detections) m.location.centers.push_back({d.cx, d.cy});
    for (double l : f.kpca.lambda) m.alpha_scale.push_back(std::sqrt(l + 1e-12));
    return m;
}

double hard_overlap_fraction(const Grid2D& a, const Grid2D& b) {
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pa = a.data[i] >= 0.5, pb = b.data[i] >= 0.5;
        inter += pa && pb;
        na += pa;
        nb += pb;
    }
    if (na == 0 || nb == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(std::min(na, nb));
}

} // namespace

TEST_CASE("initialize_states builds one state per detection", "[evolve][init]") {
    const Fixture f = make_fixture(70, 32, 20, 8, 8.0, 0.25);

    // an ideal scene containing training mask 3 at an integer offset
    const auto pairs = encode_training_set(f.kpca);
    const BinaryMask& target = pairs[3].first;
    const int img = 96;
    Grid2D fg(img, img, 0.02);
    const int ox = 30, oy = 22; // window origin in the image
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (target.at(x, y)) fg.at(x + ox, y + oy) = 0.98;
    Grid2D bg(img, img);
    for (std::size_t i = 0; i < fg.size(); ++i) bg.data[i] = 1.0 - fg.data[i];

    SceneInputs inputs;
    inputs.class_names = {"background", "object"};
    inputs.p_sem = {bg, fg};
    inputs.window_sizes = {0, 32};

    Detection good;
    good.class_id = 1;
    good.cx = ox + 0.5 * 31; // window center lands on the pasted mask
    good.cy = oy + 0.5 * 31;
    good.x0 = 0;
    good.y0 = 0;
    good.x1 = img - 1;
    good.y1 = img - 1;

    Detection off_target; // bbox content is pure background
    off_target.class_id = 1;
    off_target.cx = 80.0;
    off_target.cy = 80.0;
    off_target.x0 = 74;
    off_target.y0 = 74;
    off_target.x1 = 86;
    off_target.y1 = 86;

    inputs.detections = {good, off_target};
    const std::vector<ShapeState> states =
        initialize_states(inputs, f.kpca, f.decoder, InitConfig{});
    REQUIRE(states.size() == 2);

    for (int k = 0; k < f.kpca.c; ++k) {
        REQUIRE(states[0].alpha[k] == Approx(pairs[3].second[k]).margin(1e-6));
        REQUIRE(states[1].alpha[k] == 0.0); // fallback to the mean shape
    }
    CHECK(states[0].cx == good.cx);
    CHECK(states[0].kappa == 0.0);
}

namespace {

Fixture make_disk_fixture(int window) {
    Fixture f;
    f.window = window;
    TrainingShapeSet shapes;
    for (const double r : {4.0, 5.0, 5.5, 6.0, 6.5, 7.0, 7.5, 8.0})
        shapes.masks.push_back(gen_blob(BlobParams{r, 0, 0.0, 0}, window, window));
    f.kpca = fit_kpca(shapes, ShapeKernelSpec{}, 4);
    std::vector<ShapeCode> codes;
    for (auto& [m, code] : encode_training_set(f.kpca)) codes.push_back(code);
    f.prior = fit_kde(codes);
    f.decoder = linear_decoder_from_kpca(f.kpca);
    return f;
}

} // namespace

TEST_CASE("rotation init: symmetric disk returns zero", "[evolve][init]") {
    const Fixture f = make_disk_fixture(24);
    BinaryMask disk = gen_blob(BlobParams{7.0, 0, 0.0, 9}, 24, 24);
    InitConfig cfg;
    cfg.delta_kappa = std::numbers::pi / 12.0;
    OrientationModel uniform;
    const double kappa = init_rotation(disk, f.kpca, f.decoder, uniform, cfg, SmoothParams{});
    CHECK(kappa == 0.0);
}

TEST_CASE("rotation init recovers a bar's rotation", "[evolve][init]") {
    // train on axis-aligned bars of a few widths/lengths
    const int window = 32;
    TrainingShapeSet shapes;
    for (const int half_len : {9, 11})
        for (const int half_wid : {2, 3}) {
            BinaryMask bar(window, window);
            for (int y = 15 - half_wid; y <= 15 + half_wid + 1; ++y)
                for (int x = 15 - half_len; x <= 15 + half_len + 1; ++x) bar.at(x, y) = 1;
            shapes.masks.push_back(bar);
        }
    KpcaModel kpca = fit_kpca(shapes, ShapeKernelSpec{}, 3);
    const DecoderWeights decoder = linear_decoder_from_kpca(kpca);

    BinaryMask bar(window, window);
    for (int y = 13; y <= 18; ++y)
        for (int x = 6; x <= 25; ++x) bar.at(x, y) = 1;

    InitConfig cfg;
    cfg.delta_kappa = std::numbers::pi / 12.0; // 15 degrees
    OrientationModel uniform;

    const double target = std::numbers::pi / 6.0; // bar rotated by 30 degrees
    const BinaryMask rotated = detail::rotate_mask(bar, target);
    const double kappa = init_rotation(rotated, kpca, decoder, uniform, cfg, SmoothParams{});

    // expected compensation is -30 degrees, up to the bar's 180-degree symmetry
    const double two_pi = 2.0 * std::numbers::pi;
    double best = two_pi;
    for (const double cand : {-target, -target + std::numbers::pi}) {
        double d = std::abs(normalize_angle(cand) - kappa);
        d = std::min(d, two_pi - d);
        best = std::min(best, d);
    }
    CHECK(best <= cfg.delta_kappa / 2.0 + 1e-9);
}

TEST_CASE("rotation init follows a strong orientation prior", "[evolve][init]") {
    const Fixture f = make_disk_fixture(24);
    BinaryMask disk = gen_blob(BlobParams{7.0, 0, 0.0, 9}, 24, 24);
    InitConfig cfg;
    cfg.delta_kappa = std::numbers::pi / 12.0;
    cfg.rot_recon_weight = 0.01; // reconstruction term nearly flat for a disk
    OrientationModel vm;
    vm.kind = OrientationModel::Kind::VonMises;
    vm.mu = 40.0 * std::numbers::pi / 180.0;
    vm.concentration = 10.0;
    const double kappa = init_rotation(disk, f.kpca, f.decoder, vm, cfg, SmoothParams{});
    CHECK(kappa == Approx(45.0 * std::numbers::pi / 180.0).margin(1e-12)); // nearest grid point
}

TEST_CASE("evolution stops immediately on a flat scene", "[evolve]") {
    const Fixture f = make_fixture(73, 24, 10, 5, 7.0, 0.2);
    SceneInputs inputs;
    inputs.class_names = {"background", "object"};
    inputs.p_sem = {Grid2D(64, 64, 0.5), Grid2D(64, 64, 0.5)};
    inputs.window_sizes = {0, 24};
    Detection d;
    d.class_id = 1;
    d.cx = 32;
    d.cy = 32;
    d.x0 = 20;
    d.y0 = 20;
    d.x1 = 44;
    d.y1 = 44;
    inputs.detections = {d};

    SceneModels models = models_for(f, inputs, 4.0);
    EnergyWeights w;
    w.gamma_shp = w.gamma_loc = w.gamma_ori = w.gamma_ovp = 0.0;

    std::vector<ShapeState> states(1);
    states[0].cx = 32;
    states[0].cy = 32;
    states[0].alpha = ShapeCode(f.kpca.c, 0.1);

    const SegmentationResult r =
        run_evolution(states, models, inputs, w, SmoothParams{}, EvolveConfig{});
    CHECK(r.status == LbfgsStatus::AlreadyOptimal);
    CHECK(r.iterations == 0);
    CHECK(r.states[0].cx == 32.0);
    CHECK(r.states[0].alpha[0] == 0.1);
    REQUIRE(r.trace.size() == 1);
}

TEST_CASE("single-shape recovery on an ideal scene", "[evolve][recovery]") {
    const Fixture f = make_fixture(74, 40, 40, 16, 10.0, 0.25);

    SceneGenParams sp;
    sp.n_shapes = 1;
    sp.blob.base_radius = 10.0;
    sp.blob.harmonic_amp = 0.25;
    sp.image_size = 96;
    sp.noise_level = 0.0;
    sp.jitter = 2.5;
    sp.seed = 2024;
    const SceneTruth truth = gen_scene(sp);

    SceneFile scene = scene_file_from_truth(truth, 40, EnergyWeights{}, SmoothParams{}, 4.0);
    SceneModels models = models_for(f, scene.inputs, scene.loc_sigma);

    std::vector<ShapeState> states =
        initialize_states(scene.inputs, f.kpca, f.decoder, InitConfig{});
    const SegmentationResult r =
        run_evolution(states, models, scene.inputs, scene.weights, scene.smooth, EvolveConfig{});

    REQUIRE(r.masks.size() == 1);
    REQUIRE_FALSE(r.pruned[0]);
    CHECK(iou(r.masks[0], truth.gt_masks[0]) >= 0.95);

    // the energy trace never increases
    for (std::size_t i = 1; i < r.trace.size(); ++i)
        REQUIRE(r.trace[i] <= r.trace[i - 1] + 1e-10 * (1.0 + std::abs(r.trace[i - 1])));

    // bitwise repeatability
    const SegmentationResult again =
        run_evolution(states, models, scene.inputs, scene.weights, scene.smooth, EvolveConfig{});
    REQUIRE(again.trace == r.trace);
    REQUIRE(again.masks[0].data == r.masks[0].data);
}

TEST_CASE("evolution separates two heavily overlapping initializations", "[evolve][repulsion]") {
    const Fixture f = make_fixture(75, 40, 40, 16, 10.0, 0.25);

    SceneGenParams sp;
    sp.n_shapes = 2;
    sp.blob.base_radius = 10.0;
    sp.blob.harmonic_amp = 0.25;
    sp.image_size = 96;
    sp.noise_level = 0.0;
    sp.jitter = 0.0;
    sp.overlap_target = 0.1;
    sp.seed = 77;
    const SceneTruth truth = gen_scene(sp);

    SceneFile scene = scene_file_from_truth(truth, 40, EnergyWeights{}, SmoothParams{}, 4.0);
    SceneModels models = models_for(f, scene.inputs, scene.loc_sigma);

    std::vector<ShapeState> states =
        initialize_states(scene.inputs, f.kpca, f.decoder, InitConfig{});

    // pull both shapes toward their midpoint until they overlap ~60 %
    const double mx = 0.5 * (states[0].cx + states[1].cx);
    const double my = 0.5 * (states[0].cy + states[1].cy);
    double lo = 0.0, hi = 1.0, overlap = 0.0;
    std::vector<ShapeState> pulled = states;
    for (int iter = 0; iter < 30; ++iter) {
        const double t = 0.5 * (lo + hi);
        pulled = states;
        for (ShapeState& st : pulled) {
            st.cx += t * (mx - st.cx);
            st.cy += t * (my - st.cy);
        }
        const auto fields = composite_field(pulled, f.decoder, scene.smooth, 96, 96);
        overlap = hard_overlap_fraction(fields[0], fields[1]);
        if (std::abs(overlap - 0.6) < 0.02) break;
        (overlap < 0.6 ? lo : hi) = t;
    }
    REQUIRE(overlap > 0.5);
    REQUIRE(overlap < 0.7);

    const SegmentationResult r =
        run_evolution(pulled, models, scene.inputs, scene.weights, scene.smooth, EvolveConfig{});
    const auto final_fields = composite_field(r.states, f.decoder, scene.smooth, 96, 96);
    CHECK(hard_overlap_fraction(final_fields[0], final_fields[1]) < 0.01);

    // output masks stay disjoint
    std::size_t joint = 0;
    for (std::size_t i = 0; i < r.masks[0].size(); ++i)
        joint += r.masks[0].data[i] && r.masks[1].data[i];
    CHECK(joint == 0);
}

TEST_CASE("evolution is equivariant to integer scene shifts", "[evolve]") {
    const Fixture f = make_fixture(76, 40, 30, 12, 9.0, 0.2);

    // interior scene built by hand: the blob sits near the image center and
    // the detection coordinates are dyadic, so adding the shift is exact in
    // floating point and the shifted run is the bitwise translate
    BlobParams bp;
    bp.base_radius = 9.0;
    bp.harmonic_amp = 0.2;
    bp.rng_seed = 102;
    const BinaryMask blob = gen_blob(bp, 40, 40);
    const int img = 96;
    Grid2D fg(img, img, 0.02);
    BinaryMask gt(img, img);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x)
            if (blob.at(x, y)) {
                fg.at(x + 24, y + 21) = 0.98;
                gt.at(x + 24, y + 21) = 1;
            }
    Grid2D bg(img, img);
    for (std::size_t i = 0; i < fg.size(); ++i) bg.data[i] = 1.0 - fg.data[i];
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < img; ++y)
        for (int x = 0; x < img; ++x)
            if (gt.at(x, y)) {
                sx += x;
                sy += y;
                n += 1;
            }
    Detection det;
    det.class_id = 1;
    det.cx = std::round((sx / n + 1.3) * 64.0) / 64.0;
    det.cy = std::round((sy / n - 0.9) * 64.0) / 64.0;
    det.x0 = det.cx - 22;
    det.y0 = det.cy - 22;
    det.x1 = det.cx + 22;
    det.y1 = det.cy + 22;

    SceneFile scene;
    scene.inputs.class_names = {"background", "object"};
    scene.inputs.p_sem = {bg, fg};
    scene.inputs.window_sizes = {0, 40};
    scene.inputs.detections = {det};

    const int dx = 5, dy = 3;
    SceneFile shifted = scene;
    for (std::size_t c = 0; c < scene.inputs.p_sem.size(); ++c) {
        Grid2D g(96, 96, scene.inputs.p_sem[c].data[0]); // border value is constant
        for (int y = 0; y < 96; ++y)
            for (int x = 0; x < 96; ++x) {
                const int px = x - dx, py = y - dy;
                if (px >= 0 && px < 96 && py >= 0 && py < 96)
                    g.at(x, y) = scene.inputs.p_sem[c].at(px, py);
            }
        shifted.inputs.p_sem[c] = g;
    }
    for (Detection& d : shifted.inputs.detections) {
        d.cx += dx;
        d.cy += dy;
        d.x0 += dx;
        d.x1 += dx;
        d.y0 += dy;
        d.y1 += dy;
    }

    auto run = [&](const SceneFile& sf) {
        SceneModels models = models_for(f, sf.inputs, sf.loc_sigma);
        std::vector<ShapeState> states =
            initialize_states(sf.inputs, f.kpca, f.decoder, InitConfig{});
        return run_evolution(states, models, sf.inputs, sf.weights, sf.smooth, EvolveConfig{});
    };
    const SegmentationResult a = run(scene);
    const SegmentationResult b = run(shifted);

    REQUIRE(a.masks.size() == b.masks.size());
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x) {
            const int sx = x - dx, sy = y - dy;
            const bool expect =
                sx >= 0 && sx < 96 && sy >= 0 && sy < 96 ? a.masks[0].at(sx, sy) : false;
            REQUIRE(static_cast<bool>(b.masks[0].at(x, y)) == expect);
        }
}

TEST_CASE("mask extraction: argmax, pruning, disjointness", "[evolve][extract]") {
    // linear 'decoders' whose windows are constant plateaus
    auto plateau_weights = [](double phi_value, int window) {
        DecoderWeights w;
        w.variant = DecoderWeights::Variant::Linear;
        w.linear.mean_phi = Grid2D(window, window, -50.0);
        for (int y = 2; y < window - 2; ++y)
            for (int x = 2; x < window - 2; ++x) w.linear.mean_phi.at(x, y) = phi_value;
        return w;
    };

    SceneInputs inputs;
    inputs.class_names = {"background", "object"};
    inputs.p_sem = {Grid2D(32, 32, 0.5), Grid2D(32, 32, 0.5)};
    inputs.window_sizes = {0, 8};

    // plateaus at h = 0.9 and h = 0.7 overlapping in the middle; phi chosen
    // so the heaviside lands exactly on those values
    const double phi_a = std::log(0.9 / 0.1);
    const double phi_b = std::log(0.7 / 0.3);
    // code component 0 switches the plateau level, component 1 sinks it
    DecoderWeights w = plateau_weights(phi_a, 8);
    w.linear.eigen_fields.push_back(Grid2D(8, 8, 0.0));
    w.linear.eigen_fields.push_back(Grid2D(8, 8, 0.0));
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) {
            w.linear.eigen_fields[0].at(x, y) = phi_b - phi_a;
            w.linear.eigen_fields[1].at(x, y) = -3.0 * phi_a;
        }

    std::vector<ShapeState> states(3);
    states[0].cx = 9.5;
    states[0].cy = 15.5;
    states[0].alpha = {0.0, 0.0}; // h = 0.9 plateau
    states[1].cx = 12.5;          // overlaps shape 0 on a shared column
    states[1].cy = 15.5;
    states[1].alpha = {1.0, 0.0}; // h = 0.7 plateau
    states[2].cx = 25.5;          // sunk below the contour: collapses to nothing
    states[2].cy = 25.5;
    states[2].alpha = {0.0, 1.0};

    SegmentationResult result;
    result.states = states;
    KdePrior dummy = fit_kde({{0.0, 0.0}, {1.0, 1.0}});
    SceneModels models;
    models.decoder = &w;
    models.shape_prior = &dummy;

    EvolveConfig cfg;
    cfg.empty_shape_area_threshold = 10.0;
    extract_instance_masks(result, models, inputs, SmoothParams{}, cfg);

    REQUIRE(result.masks.size() == 3);
    CHECK_FALSE(result.pruned[0]);
    CHECK_FALSE(result.pruned[1]);
    CHECK(result.pruned[2]); // empty contour falls under the area threshold
    CHECK(result.masks[2].area() == 0);

    // shared pixels went to the stronger field
    const auto fields = composite_field(states, w, SmoothParams{}, 32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const bool both = fields[0].at(x, y) >= 0.5 && fields[1].at(x, y) >= 0.5;
            if (both) {
                CHECK(result.masks[0].at(x, y) == 1);
                CHECK(result.masks[1].at(x, y) == 0);
            }
        }

    // pairwise disjoint
    for (std::size_t i = 0; i < result.masks[0].size(); ++i) {
        int owners = 0;
        for (const BinaryMask& m : result.masks) owners += m.data[i];
        REQUIRE(owners <= 1);
    }

    // non-overlapping hard fields come back exactly as thresholded fields
    std::vector<ShapeState> apart = {states[0], states[0]};
    apart[1].cx = 25.5;
    apart[1].cy = 25.5;
    SegmentationResult r2;
    r2.states = apart;
    EvolveConfig loose;
    loose.empty_shape_area_threshold = 1.0;
    extract_instance_masks(r2, models, inputs, SmoothParams{}, loose);
    const auto apart_fields = composite_field(apart, w, SmoothParams{}, 32, 32);
    for (std::size_t i = 0; i < r2.masks[0].size(); ++i) {
        REQUIRE(r2.masks[0].data[i] == (apart_fields[0].data[i] >= 0.5 ? 1 : 0));
        REQUIRE(r2.masks[1].data[i] == (apart_fields[1].data[i] >= 0.5 ? 1 : 0));
    }
}

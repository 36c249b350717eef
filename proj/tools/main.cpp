// contourfit command line: shape-model fitting, decoder training,
// synthetic data, segmentation, evaluation, and gradient checks.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "contourfit/config.hpp"
#include "contourfit/decoder.hpp"
#include "contourfit/energy.hpp"
#include "contourfit/evolve.hpp"
#include "contourfit/gradcheck.hpp"
#include "contourfit/manifest.hpp"
#include "contourfit/metrics.hpp"
#include "contourfit/model_bundle.hpp"
#include "contourfit/ppm.hpp"
#include "contourfit/scene.hpp"
#include "contourfit/synth.hpp"
#include "contourfit/tensor_io.hpp"
#include "contourfit/train.hpp"
#include "contourfit/version.hpp"

namespace fs = std::filesystem;
using namespace contourfit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
};

Config load_config(const CommonArgs& args) {
    Config cfg;
    if (!args.config_path.empty()) cfg.load_file(args.config_path);
    return cfg;
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<BinaryMask> load_mask_dir(const fs::path& dir) {
    std::vector<BinaryMask> masks;
    for (const fs::path& p : sorted_files(dir, ".cft"))
        masks.push_back(mask_from_tensor(read_cft(p), p.filename().string()));
    return masks;
}

EvolveConfig evolve_config_from(const Config& cfg) {
    EvolveConfig e;
    e.max_iterations = cfg.get_int("optimizer.max_iterations");
    e.grad_tolerance = cfg.get_double("optimizer.grad_tolerance");
    e.lbfgs_memory = cfg.get_int("optimizer.memory");
    e.wolfe_c1 = cfg.get_double("optimizer.wolfe_c1");
    e.wolfe_c2 = cfg.get_double("optimizer.wolfe_c2");
    e.empty_shape_area_threshold = cfg.get_double("optimizer.empty_area_threshold");
    return e;
}

InitConfig init_config_from(const Config& cfg) {
    InitConfig i;
    i.use_rotation_init = cfg.get_bool("init.use_rotation");
    i.delta_kappa = cfg.get_double("init.delta_kappa");
    i.min_init_pixels = cfg.get_int("init.min_pixels");
    i.rot_prior_weight = cfg.get_double("init.rot_prior_weight");
    i.rot_recon_weight = cfg.get_double("init.rot_recon_weight");
    return i;
}

OrientationModel orientation_from(const Config& cfg) {
    OrientationModel o;
    const std::string kind = cfg.get("ori.kind");
    if (kind == "uniform") {
        o.kind = OrientationModel::Kind::Uniform;
    } else if (kind == "von-mises") {
        o.kind = OrientationModel::Kind::VonMises;
        o.mu = cfg.get_double("ori.mu");
        o.concentration = cfg.get_double("ori.concentration");
    } else {
        throw ArgumentError("ori.kind must be 'uniform' or 'von-mises'");
    }
    return o;
}

std::vector<double> alpha_scale_from(const KpcaModel& model) {
    std::vector<double> s(model.lambda.size());
    const double floor = model.lambda.empty() ? 0.0 : 1e-8 * model.lambda.front();
    for (std::size_t k = 0; k < s.size(); ++k)
        s[k] = std::sqrt(std::max(model.lambda[k], floor) + 1e-12);
    return s;
}

// ---------------------------------------------------------------------------
// fit-shape-model
// ---------------------------------------------------------------------------

int cmd_fit_shape_model(const std::string& masks_dir, const std::string& out_dir,
                        const CommonArgs& common) {
    Stopwatch clock;
    const Config cfg = load_config(common);

    TrainingShapeSet shapes;
    shapes.masks = load_mask_dir(masks_dir);
    if (shapes.masks.size() < 2) throw ArgumentError("need at least 2 shapes");

    ShapeKernelSpec spec;
    spec.kind = shape_kernel_from_string(cfg.get("kpca.kernel"));
    spec.rbf_scale = cfg.get_double("kpca.rbf_scale");
    spec.clamp = cfg.get_double("kpca.clamp");
    int c = cfg.get_int("kpca.components");
    const int c_max = static_cast<int>(shapes.masks.size()) - 1;
    if (c > c_max) {
        std::cerr << "note: reducing components from " << c << " to " << c_max
                  << " (training set size)\n";
        c = c_max;
    }

    ShapeModelBundle bundle;
    bundle.kpca = fit_kpca(shapes, spec, c);
    if (bundle.kpca.reduced)
        std::cerr << "warning: only " << bundle.kpca.c << " positive components retained\n";

    std::vector<ShapeCode> codes;
    for (auto& [mask, code] : encode_training_set(bundle.kpca)) codes.push_back(code);
    const double sigma = cfg.get_double("kde.sigma");
    bundle.kde = fit_kde(codes, sigma > 0.0 ? std::optional<double>(sigma) : std::nullopt);
    if (bundle.kde.sigma_fallback)
        std::cerr << "warning: identical training codes; kde sigma fell back to 1\n";

    save_shape_model(out_dir, bundle);
    write_run_manifest(out_dir, "fit-shape-model", cfg, common.seed,
                       {{"masks", digest_inputs(masks_dir)}}, clock.seconds());
    std::cout << "fitted shape model: " << bundle.kpca.count() << " masks, c=" << bundle.kpca.c
              << ", kde sigma=" << bundle.kde.sigma << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train-decoder
// ---------------------------------------------------------------------------

int cmd_train_decoder(const std::string& model_dir, const std::string& variant,
                      const std::string& out_dir, const CommonArgs& common) {
    Stopwatch clock;
    const Config cfg = load_config(common);
    const ShapeModelBundle bundle = load_shape_model(model_dir);

    DecoderWeights weights;
    std::vector<double> history;
    if (variant == "linear") {
        weights = linear_decoder_from_kpca(bundle.kpca);
    } else if (variant == "deep") {
        DeepDecoderSpec spec;
        spec.c = bundle.kpca.c;
        spec.d_f = cfg.get_int("decoder.d_f");
        spec.n_conv0 = cfg.get_int("decoder.n_conv0");
        spec.d0 = cfg.get_int("decoder.d0");
        spec.d_out = bundle.kpca.dim_w;
        spec.validate();

        TrainConfig tc;
        tc.learning_rate = cfg.get_double("train.learning_rate");
        tc.beta1 = cfg.get_double("train.beta1");
        tc.beta2 = cfg.get_double("train.beta2");
        tc.epsilon = cfg.get_double("train.epsilon");
        tc.epochs = cfg.get_int("train.epochs");
        tc.batch_size = cfg.get_int("train.batch_size");
        tc.rng_seed = common.seed;

        std::vector<std::pair<ShapeCode, BinaryMask>> pairs;
        for (auto& [mask, code] : encode_training_set(bundle.kpca))
            pairs.emplace_back(code, mask);
        const TrainResult result = train_decoder(spec, pairs, tc);
        weights = result.weights;
        history = result.loss_history;
    } else {
        throw ArgumentError("variant must be 'linear' or 'deep'");
    }

    save_weights(out_dir, weights);
    {
        std::ofstream f(fs::path(out_dir) / "loss.csv", std::ios::trunc);
        f << "epoch,loss\n";
        for (std::size_t e = 0; e < history.size(); ++e) f << e + 1 << "," << history[e] << "\n";
    }
    write_run_manifest(out_dir, "train-decoder", cfg, common.seed,
                       {{"model", digest_inputs(model_dir)}}, clock.seconds());
    std::cout << "decoder (" << variant << ") written to " << out_dir;
    if (!history.empty()) std::cout << ", final loss " << history.back();
    std::cout << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(int n_scenes, int n_masks, const std::string& out_dir, int jobs,
              const CommonArgs& common) {
    Stopwatch clock;
    const Config cfg = load_config(common);
    fs::create_directories(out_dir);

    BlobParams blob;
    blob.base_radius = cfg.get_double("synth.base_radius");
    blob.n_harmonics = cfg.get_int("synth.n_harmonics");
    blob.harmonic_amp = cfg.get_double("synth.harmonic_amp");
    const int window = cfg.get_int("synth.window");

    if (n_masks > 0) {
        const fs::path mask_dir = fs::path(out_dir) / "masks";
        fs::create_directories(mask_dir);
        Rng rng(common.seed);
        for (int i = 0; i < n_masks; ++i) {
            BlobParams bp = blob;
            bp.rng_seed = rng.derive(static_cast<std::uint64_t>(i) + 0x6d61736bULL);
            const BinaryMask m = gen_blob(bp, window, window);
            char name[32];
            std::snprintf(name, sizeof name, "mask_%04d.cft", i);
            write_cft(mask_dir / name, tensor_from_mask(m));
        }
        std::cout << "wrote " << n_masks << " training masks\n";
    }

    if (n_scenes > 0) {
        SceneGenParams sp;
        sp.n_shapes = cfg.get_int("synth.n_shapes");
        sp.blob = blob;
        sp.overlap_target = cfg.get_double("synth.overlap_target");
        sp.noise_level = cfg.get_double("synth.noise");
        sp.jitter = cfg.get_double("synth.jitter");
        sp.image_size = cfg.get_int("synth.image_size");

        EnergyWeights weights;
        weights.gamma_shp = cfg.get_double("weights.gamma_shp");
        weights.gamma_loc = cfg.get_double("weights.gamma_loc");
        weights.gamma_ori = cfg.get_double("weights.gamma_ori");
        weights.gamma_ovp = cfg.get_double("weights.gamma_ovp");
        const SmoothParams smooth = cfg.smooth_params();
        const double loc_sigma = cfg.get_double("loc.sigma");

        Rng rng(common.seed);
        std::vector<std::uint64_t> scene_seeds(n_scenes);
        for (int s = 0; s < n_scenes; ++s)
            scene_seeds[s] = rng.derive(static_cast<std::uint64_t>(s) + 0x7363656eULL);

        std::atomic<int> next{0};
        std::vector<std::string> errors(n_scenes);
        auto worker = [&]() {
            for (;;) {
                const int s = next.fetch_add(1);
                if (s >= n_scenes) return;
                try {
                    SceneGenParams local = sp;
                    local.seed = scene_seeds[s];
                    const SceneTruth truth = gen_scene(local);
                    char name[32];
                    std::snprintf(name, sizeof name, "scene_%03d", s);
                    const fs::path scene_dir = fs::path(out_dir) / name;
                    save_scene(scene_dir,
                               scene_file_from_truth(truth, window, weights, smooth, loc_sigma));
                    const fs::path gt_dir = scene_dir / "gt";
                    fs::create_directories(gt_dir);
                    for (std::size_t g = 0; g < truth.gt_masks.size(); ++g) {
                        char gt_name[32];
                        std::snprintf(gt_name, sizeof gt_name, "mask_%03zu.cft", g);
                        write_cft(gt_dir / gt_name, tensor_from_mask(truth.gt_masks[g]));
                    }
                } catch (const std::exception& e) {
                    errors[s] = e.what();
                }
            }
        };
        const int n_threads = std::max(1, std::min(jobs, n_scenes));
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        for (int s = 0; s < n_scenes; ++s)
            if (!errors[s].empty())
                throw GenerationError("scene " + std::to_string(s) + ": " + errors[s]);
        std::cout << "wrote " << n_scenes << " scenes\n";
    }

    write_run_manifest(out_dir, "synth", cfg, common.seed, {}, clock.seconds());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

int cmd_segment(const std::string& scene_path, const std::string& model_dir,
                const std::string& weights_dir, const std::string& out_dir,
                const CommonArgs& common, bool config_given) {
    Stopwatch clock;
    const Config cfg = load_config(common);
    const SceneFile scene = load_scene(scene_path);
    const ShapeModelBundle bundle = load_shape_model(model_dir);
    const DecoderWeights decoder = load_weights(weights_dir);

    // weights/smoothing travel with the scene; an explicit --config overrides
    EnergyWeights weights = scene.weights;
    SmoothParams smooth = scene.smooth;
    double loc_sigma = scene.loc_sigma;
    if (config_given) {
        weights.gamma_shp = cfg.get_double("weights.gamma_shp");
        weights.gamma_loc = cfg.get_double("weights.gamma_loc");
        weights.gamma_ori = cfg.get_double("weights.gamma_ori");
        weights.gamma_ovp = cfg.get_double("weights.gamma_ovp");
        smooth = cfg.smooth_params();
        loc_sigma = cfg.get_double("loc.sigma");
    }

    SceneModels models;
    models.decoder = &decoder;
    models.shape_prior = &bundle.kde;
    models.location.sigma_loc = loc_sigma;
    for (const Detection& d : scene.inputs.detections)
        models.location.centers.push_back({d.cx, d.cy});
    models.orientation = orientation_from(cfg);
    models.alpha_scale = alpha_scale_from(bundle.kpca);

    const InitConfig init_cfg = init_config_from(cfg);
    const EvolveConfig evolve_cfg = evolve_config_from(cfg);

    std::vector<ShapeState> states =
        initialize_states(scene.inputs, bundle.kpca, decoder, init_cfg, models.orientation, smooth);
    SegmentationResult result =
        run_evolution(std::move(states), models, scene.inputs, weights, smooth, evolve_cfg);

    fs::create_directories(out_dir);
    const fs::path mask_dir = fs::path(out_dir) / "masks";
    fs::create_directories(mask_dir);
    nlohmann::ordered_json jshapes = nlohmann::ordered_json::array();
    std::vector<BinaryMask> kept;
    for (std::size_t i = 0; i < result.states.size(); ++i) {
        nlohmann::ordered_json js;
        js["center"] = {result.states[i].cx, result.states[i].cy};
        js["kappa"] = result.states[i].kappa;
        js["alpha"] = result.states[i].alpha;
        js["class_id"] = result.states[i].class_id;
        js["pruned"] = static_cast<bool>(result.pruned[i]);
        js["area"] = result.masks[i].area();
        if (!result.pruned[i]) {
            char name[32];
            std::snprintf(name, sizeof name, "instance_%03zu.cft", i);
            write_cft(mask_dir / name, tensor_from_mask(result.masks[i]));
            js["mask"] = std::string("masks/") + name;
            kept.push_back(result.masks[i]);
        }
        jshapes.push_back(js);
    }

    nlohmann::ordered_json jr;
    jr["status"] = to_string(result.status);
    jr["iterations"] = result.iterations;
    jr["energy_trace"] = result.trace;
    jr["weights"] = {{"gamma_shp", weights.gamma_shp},
                     {"gamma_loc", weights.gamma_loc},
                     {"gamma_ori", weights.gamma_ori},
                     {"gamma_ovp", weights.gamma_ovp}};
    jr["shapes"] = jshapes;
    {
        std::ofstream f(fs::path(out_dir) / "result.json", std::ios::trunc);
        f << jr.dump(2) << "\n";
    }

    Grid2D background(scene.inputs.image_width(), scene.inputs.image_height());
    for (std::size_t i = 0; i < background.size(); ++i)
        background.data[i] = 1.0 - scene.inputs.p_sem[0].data[i];
    write_overlay_ppm(fs::path(out_dir) / "overlay.ppm", background, kept, common.seed);

    write_run_manifest(out_dir, "segment", cfg, common.seed,
                       {{"scene", digest_inputs(fs::path(scene_path).parent_path())},
                        {"model", digest_inputs(model_dir)},
                        {"weights", digest_inputs(weights_dir)}},
                       clock.seconds());
    std::cout << "segmented " << result.states.size() << " shapes (" << kept.size() << " kept), "
              << to_string(result.status) << " after " << result.iterations << " iterations\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

// either a directory of .cft masks, or a directory of subdirectories of them
std::vector<std::pair<std::string, std::vector<BinaryMask>>> collect_mask_sets(
    const fs::path& dir) {
    std::vector<std::pair<std::string, std::vector<BinaryMask>>> sets;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    if (!sorted_files(dir, ".cft").empty()) {
        sets.emplace_back("", load_mask_dir(dir));
        return sets;
    }
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const fs::path& sub : subdirs) {
        // scene directories produced by synth keep ground truth under gt/
        const fs::path inner = fs::is_directory(sub / "gt") ? sub / "gt" : sub;
        if (!sorted_files(inner, ".cft").empty())
            sets.emplace_back(sub.filename().string(), load_mask_dir(inner));
    }
    if (sets.empty()) throw DataError("no .cft masks found under " + dir.string());
    return sets;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, double eps_d, double iou_min,
             const std::string& out_dir, const CommonArgs& common) {
    Stopwatch clock;
    const Config cfg = load_config(common);
    const auto preds = collect_mask_sets(pred_dir);
    const auto gts = collect_mask_sets(gt_dir);
    if (preds.size() != gts.size())
        throw DataError("prediction and ground-truth sets differ in scene count");

    nlohmann::ordered_json jscenes = nlohmann::ordered_json::array();
    std::vector<std::string> instance_rows;
    double iou_sum = 0.0, wiou_sum = 0.0;
    std::size_t matched = 0, pred_total = 0, gt_total = 0;

    for (std::size_t s = 0; s < preds.size(); ++s) {
        const auto& [name, pred_masks] = preds[s];
        const auto& [gt_name, gt_masks] = gts[s];
        const MatchReport report = match_instances(pred_masks, gt_masks, iou_min);
        pred_total += pred_masks.size();
        gt_total += gt_masks.size();
        matched += report.matches.size();

        nlohmann::ordered_json jm = nlohmann::ordered_json::array();
        for (const auto& [p, g, v] : report.matches) {
            const double w = weighted_iou(pred_masks[p], gt_masks[g], eps_d);
            iou_sum += v;
            wiou_sum += w;
            nlohmann::ordered_json j;
            j["pred"] = p;
            j["gt"] = g;
            j["iou"] = v;
            j["wiou"] = w;
            jm.push_back(j);
            instance_rows.push_back(name + "," + std::to_string(p) + "," + std::to_string(g) +
                                    "," + std::to_string(v) + "," + std::to_string(w));
        }
        nlohmann::ordered_json js;
        js["scene"] = name;
        js["precision"] = report.precision;
        js["recall"] = report.recall;
        js["matches"] = jm;
        jscenes.push_back(js);
    }

    // precision/recall over IoU cutoffs
    nlohmann::ordered_json jcurve = nlohmann::ordered_json::array();
    std::vector<std::string> curve_rows;
    for (int step = 0; step <= 9; ++step) {
        const double cutoff = 0.50 + 0.05 * step;
        std::size_t m = 0, pt = 0, gt = 0;
        for (std::size_t s = 0; s < preds.size(); ++s) {
            const MatchReport r = match_instances(preds[s].second, gts[s].second, cutoff);
            m += r.matches.size();
            pt += preds[s].second.size();
            gt += gts[s].second.size();
        }
        const double prec = pt ? static_cast<double>(m) / pt : (gt ? 0.0 : 1.0);
        const double rec = gt ? static_cast<double>(m) / gt : (pt ? 0.0 : 1.0);
        nlohmann::ordered_json j;
        j["iou_cutoff"] = cutoff;
        j["precision"] = prec;
        j["recall"] = rec;
        jcurve.push_back(j);
        curve_rows.push_back(std::to_string(cutoff) + "," + std::to_string(prec) + "," +
                             std::to_string(rec));
    }

    nlohmann::ordered_json jr;
    jr["eps_d"] = eps_d;
    jr["iou_min"] = iou_min;
    jr["scenes"] = jscenes;
    jr["mean_iou"] = matched ? iou_sum / matched : 0.0;
    jr["mean_wiou"] = matched ? wiou_sum / matched : 0.0;
    jr["precision"] = pred_total ? static_cast<double>(matched) / pred_total : (gt_total ? 0.0 : 1.0);
    jr["recall"] = gt_total ? static_cast<double>(matched) / gt_total : (pred_total ? 0.0 : 1.0);
    jr["pr_curve"] = jcurve;

    if (out_dir.empty()) {
        std::cout << jr.dump(2) << "\n";
    } else {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "report.json", std::ios::trunc) << jr.dump(2) << "\n";
        std::ofstream csv(fs::path(out_dir) / "report.csv", std::ios::trunc);
        csv << "scene,pred,gt,iou,wiou\n";
        for (const std::string& row : instance_rows) csv << row << "\n";
        std::ofstream curve(fs::path(out_dir) / "pr_curve.csv", std::ios::trunc);
        curve << "iou_cutoff,precision,recall\n";
        for (const std::string& row : curve_rows) curve << row << "\n";
        write_run_manifest(out_dir, "eval", cfg, common.seed,
                           {{"pred", digest_inputs(pred_dir)}, {"gt", digest_inputs(gt_dir)}},
                           clock.seconds());
        std::cout << "mean IoU " << jr["mean_iou"].get<double>() << ", mean wIoU "
                  << jr["mean_wiou"].get<double>() << ", precision "
                  << jr["precision"].get<double>() << ", recall " << jr["recall"].get<double>()
                  << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const CommonArgs& common) {
    const GradcheckReport report = run_gradcheck(common.seed == 0 ? 1 : common.seed);
    for (const GradcheckLine& line : report.lines)
        std::cout << (line.pass ? "[PASS] " : "[FAIL] ") << line.name
                  << ": max rel err = " << line.max_rel_err << " (tolerance " << line.tolerance
                  << ")\n";
    return report.ok ? kExitOk : kExitNumerical;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"contourfit: multi-contour level-set instance segmentation with learned shape priors"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("contourfit ") + kVersion);

    CommonArgs common;
    bool config_given = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "configuration file (key = value lines)")
            ->check(CLI::ExistingFile)
            ->each([&](const std::string&) { config_given = true; });
        sub->add_option("--seed", common.seed, "random seed (default 0)");
    };

    std::string masks_dir, out_dir, model_dir, weights_dir, scene_path, pred_dir, gt_dir;
    std::string variant = "linear";
    int n_scenes = 1, n_masks = 0, jobs = 1;
    double eps_d = 3.0, iou_min = 0.7;
    std::string eval_out;

    CLI::App* fit = app.add_subcommand("fit-shape-model", "fit the kernel-PCA shape model + KDE prior");
    fit->add_option("--masks", masks_dir, "directory of CFT1 training masks")->required();
    fit->add_option("--out", out_dir, "output bundle directory")->required();
    add_common(fit);

    CLI::App* train = app.add_subcommand("train-decoder", "derive or train a decoder for a fitted model");
    train->add_option("--model", model_dir, "shape model bundle")->required();
    train->add_option("--variant", variant, "decoder variant")
        ->check(CLI::IsMember({"linear", "deep"}))
        ->required();
    train->add_option("--out", out_dir, "output weights directory")->required();
    add_common(train);

    CLI::App* synth = app.add_subcommand("synth", "generate synthetic scenes and training masks");
    synth->add_option("--n-scenes", n_scenes, "number of scenes (default 1)");
    synth->add_option("--n-masks", n_masks, "number of training masks (default 0)");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--jobs", jobs, "worker threads (deterministic, default 1)");
    add_common(synth);

    CLI::App* segment = app.add_subcommand("segment", "run the multi-contour evolution on a scene");
    segment->add_option("--scene", scene_path, "scene.json path")->required();
    segment->add_option("--model", model_dir, "shape model bundle")->required();
    segment->add_option("--weights", weights_dir, "decoder weights bundle")->required();
    segment->add_option("--out", out_dir, "output directory")->required();
    add_common(segment);

    CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
    eval_cmd->add_option("--pred", pred_dir, "prediction mask directory")->required();
    eval_cmd->add_option("--gt", gt_dir, "ground-truth mask directory")->required();
    eval_cmd->add_option("--eps-d", eps_d, "contour band half-width in pixels (default 3)");
    eval_cmd->add_option("--iou-min", iou_min, "matching IoU threshold (default 0.7)");
    eval_cmd->add_option("--out", eval_out, "report directory (default: print to stdout)");
    add_common(eval_cmd);

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
    add_common(gc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (fit->parsed()) return cmd_fit_shape_model(masks_dir, out_dir, common);
        if (train->parsed()) return cmd_train_decoder(model_dir, variant, out_dir, common);
        if (synth->parsed()) return cmd_synth(n_scenes, n_masks, out_dir, jobs, common);
        if (segment->parsed())
            return cmd_segment(scene_path, model_dir, weights_dir, out_dir, common, config_given);
        if (eval_cmd->parsed()) return cmd_eval(pred_dir, gt_dir, eps_d, iou_min, eval_out, common);
        if (gc->parsed()) return cmd_gradcheck(common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

#ifndef CONTOURFIT_SCENE_HPP
#define CONTOURFIT_SCENE_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/shape_model.hpp"
#include "contourfit/tensor_io.hpp"

namespace contourfit {

/// One detector output: approximate center, loose box, class index.
struct Detection {
    double cx = 0.0, cy = 0.0;
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0; // inclusive pixel bounds
    int class_id = 1;
};

/// Relative influence of the prior terms.
struct EnergyWeights {
    double gamma_shp = 1.0;
    double gamma_loc = 0.1;
    double gamma_ori = 0.0;
    double gamma_ovp = 5.0;
};

/// Isotropic Gaussian location prior around each detection center.
struct LocationModel {
    double sigma_loc = 4.0;
    std::vector<std::array<double, 2>> centers; // one per detection

    // log-density up to a constant, and its gradient
    double log_density(int shape, double cx, double cy) const {
        const double dx = cx - centers[shape][0];
        const double dy = cy - centers[shape][1];
        return -(dx * dx + dy * dy) / (2.0 * sigma_loc * sigma_loc);
    }
    void grad(int shape, double cx, double cy, double& gx, double& gy) const {
        gx = -(cx - centers[shape][0]) / (sigma_loc * sigma_loc);
        gy = -(cy - centers[shape][1]) / (sigma_loc * sigma_loc);
    }
};

/// Per-class orientation prior: uniform (constant term) or von Mises.
struct OrientationModel {
    enum class Kind { Uniform, VonMises } kind = Kind::Uniform;
    double mu = 0.0;
    double concentration = 0.0;

    double log_density(double kappa) const {
        if (kind == Kind::Uniform) return 0.0;
        return concentration * std::cos(kappa - mu); // constant dropped
    }
    double grad(double kappa) const {
        if (kind == Kind::Uniform) return 0.0;
        return -concentration * std::sin(kappa - mu);
    }
};

/// One evolving object: center, rotation, shape code, class.
struct ShapeState {
    double cx = 0.0, cy = 0.0;
    double kappa = 0.0;
    ShapeCode alpha;
    int class_id = 1;
};

/// External inputs to a segmentation run: per-class semantic probability
/// grids (index 0 = background), detections, and the per-class evolution
/// window sizes.
struct SceneInputs {
    std::vector<std::string> class_names; // index 0 = background
    std::vector<Grid2D> p_sem;            // one grid per class
    std::vector<Detection> detections;
    std::vector<int> window_sizes; // per class id; entry 0 unused

    int image_width() const { return p_sem.empty() ? 0 : p_sem.front().width; }
    int image_height() const { return p_sem.empty() ? 0 : p_sem.front().height; }
    int foreground_classes() const { return static_cast<int>(p_sem.size()) - 1; }

    void validate() const {
        if (p_sem.size() < 2) throw ArgumentError("scene: need background plus >= 1 class grid");
        if (class_names.size() != p_sem.size())
            throw ArgumentError("scene: class table and probability grids disagree");
        if (window_sizes.size() != p_sem.size())
            throw ArgumentError("scene: window size table and class table disagree");
        const Grid2D& first = p_sem.front();
        for (const Grid2D& g : p_sem)
            if (!g.same_dims(first)) throw DimensionError("scene: probability grid dimensions differ");
        for (std::size_t i = 0; i < first.size(); ++i) {
            double s = 0.0;
            for (const Grid2D& g : p_sem) s += g.data[i];
            if (std::abs(s - 1.0) > 1e-4)
                throw ArgumentError("scene: per-pixel class probabilities must sum to 1");
        }
        for (const Detection& d : detections) {
            if (d.class_id < 1 || d.class_id >= static_cast<int>(p_sem.size()))
                throw ArgumentError("scene: detection class out of range");
            if (d.x1 <= d.x0 || d.y1 <= d.y0) throw ArgumentError("scene: degenerate bounding box");
            if (d.cx < 0 || d.cx > first.width - 1 || d.cy < 0 || d.cy > first.height - 1)
                throw ArgumentError("scene: detection center outside the image");
            if (window_sizes[d.class_id] <= 0 ||
                window_sizes[d.class_id] > std::min(first.width, first.height))
                throw ArgumentError("scene: window size out of range");
        }
    }
};

// ---------------------------------------------------------------------------
// Interaction graph
// ---------------------------------------------------------------------------

/// Sparse set of shape pairs that are close enough to interact.
struct InteractionGraph {
    std::vector<std::pair<int, int>> edges;        // i < j
    std::vector<std::array<double, 4>> rectangles; // per shape: x0, y0, x1, y1
};

/// Each shape gets its evolution window centered on the detection,
/// dilated by the location-model reach (3 sigma); an edge joins every
/// pair whose rectangles intersect (touching counts).
inline InteractionGraph build_interaction_graph(const std::vector<Detection>& detections,
                                                const LocationModel& loc,
                                                const std::vector<int>& window_sizes) {
    if (detections.empty()) throw ArgumentError("build_interaction_graph: no detections");
    InteractionGraph g;
    const double reach = 3.0 * loc.sigma_loc;
    g.rectangles.reserve(detections.size());
    for (const Detection& d : detections) {
        const double half = 0.5 * window_sizes[d.class_id] + reach;
        g.rectangles.push_back({d.cx - half, d.cy - half, d.cx + half, d.cy + half});
    }
    for (std::size_t i = 0; i < detections.size(); ++i)
        for (std::size_t j = i + 1; j < detections.size(); ++j) {
            const auto& a = g.rectangles[i];
            const auto& b = g.rectangles[j];
            const bool overlap =
                a[0] <= b[2] && b[0] <= a[2] && a[1] <= b[3] && b[1] <= a[3];
            if (overlap) g.edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
        }
    return g;
}

// ---------------------------------------------------------------------------
// Scene files: scene.json plus one CFT1 grid per class
// ---------------------------------------------------------------------------

struct SceneFile {
    SceneInputs inputs;
    EnergyWeights weights;
    SmoothParams smooth;
    double loc_sigma = 4.0;
};

inline void save_scene(const std::filesystem::path& dir, const SceneFile& scene) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::ordered_json j;
    j["classes"] = scene.inputs.class_names;
    j["window_sizes"] = scene.inputs.window_sizes;
    nlohmann::ordered_json dets = nlohmann::ordered_json::array();
    for (const Detection& d : scene.inputs.detections) {
        nlohmann::ordered_json jd;
        jd["cx"] = d.cx;
        jd["cy"] = d.cy;
        jd["bbox"] = {d.x0, d.y0, d.x1, d.y1};
        jd["class_id"] = d.class_id;
        dets.push_back(jd);
    }
    j["detections"] = dets;
    std::vector<std::string> grid_files;
    for (std::size_t c = 0; c < scene.inputs.p_sem.size(); ++c) {
        const std::string name = "p_sem_" + std::to_string(c) + ".cft";
        write_cft(dir / name, tensor_from_grid(scene.inputs.p_sem[c]));
        grid_files.push_back(name);
    }
    j["p_sem"] = grid_files;
    j["weights"] = {{"gamma_shp", scene.weights.gamma_shp},
                    {"gamma_loc", scene.weights.gamma_loc},
                    {"gamma_ori", scene.weights.gamma_ori},
                    {"gamma_ovp", scene.weights.gamma_ovp}};
    j["smooth"] = {{"delta", scene.smooth.delta},
                   {"gamma", scene.smooth.gamma},
                   {"variant", to_string(scene.smooth.variant)}};
    j["loc_sigma"] = scene.loc_sigma;

    std::ofstream f(dir / "scene.json", std::ios::trunc);
    if (!f) throw DataError("cannot write " + (dir / "scene.json").string());
    f << j.dump(2) << "\n";
}

inline SceneFile load_scene(const std::filesystem::path& scene_json) {
    namespace fs = std::filesystem;
    std::ifstream f(scene_json);
    if (!f) throw DataError("cannot open scene file: " + scene_json.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("scene file is not valid JSON: " + std::string(e.what()));
    }
    const fs::path dir = scene_json.parent_path();
    SceneFile scene;
    try {
        scene.inputs.class_names = j.at("classes").get<std::vector<std::string>>();
        scene.inputs.window_sizes = j.at("window_sizes").get<std::vector<int>>();
        for (const auto& jd : j.at("detections")) {
            Detection d;
            d.cx = jd.at("cx").get<double>();
            d.cy = jd.at("cy").get<double>();
            const auto bbox = jd.at("bbox").get<std::vector<double>>();
            if (bbox.size() != 4) throw FormatError("scene: bbox must have 4 entries");
            d.x0 = bbox[0];
            d.y0 = bbox[1];
            d.x1 = bbox[2];
            d.y1 = bbox[3];
            d.class_id = jd.at("class_id").get<int>();
            scene.inputs.detections.push_back(d);
        }
        for (const auto& name : j.at("p_sem").get<std::vector<std::string>>())
            scene.inputs.p_sem.push_back(grid_from_tensor(read_cft(dir / name), name));
        scene.weights.gamma_shp = j.at("weights").at("gamma_shp").get<double>();
        scene.weights.gamma_loc = j.at("weights").at("gamma_loc").get<double>();
        scene.weights.gamma_ori = j.at("weights").at("gamma_ori").get<double>();
        scene.weights.gamma_ovp = j.at("weights").at("gamma_ovp").get<double>();
        scene.smooth.delta = j.at("smooth").at("delta").get<double>();
        scene.smooth.gamma = j.at("smooth").at("gamma").get<double>();
        scene.smooth.variant =
            smooth_max_variant_from_string(j.at("smooth").at("variant").get<std::string>());
        scene.loc_sigma = j.at("loc_sigma").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("scene file is missing fields: " + std::string(e.what()));
    }
    scene.inputs.validate();
    return scene;
}

} // namespace contourfit

#endif

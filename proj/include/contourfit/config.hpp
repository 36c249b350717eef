#ifndef CONTOURFIT_CONFIG_HPP
#define CONTOURFIT_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"

namespace contourfit {

/// Flat key=value configuration. Every key has a documented default and
/// unknown keys are rejected; '#' starts a comment.
class Config {
public:
    Config() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            // smooth surrogates
            {"smooth.delta", "1.0"},
            {"smooth.gamma", "10.0"},
            {"smooth.variant", "log-sum-exp"},
            // energy weights
            {"weights.gamma_shp", "1.0"},
            {"weights.gamma_loc", "0.1"},
            {"weights.gamma_ori", "0.0"},
            {"weights.gamma_ovp", "5.0"},
            // location / orientation models
            {"loc.sigma", "4.0"},
            {"ori.kind", "uniform"},
            {"ori.mu", "0.0"},
            {"ori.concentration", "0.0"},
            // shape model
            {"kpca.kernel", "linear-on-signed-distance"},
            {"kpca.components", "32"},
            {"kpca.rbf_scale", "10.0"},
            {"kpca.clamp", "0"}, // 0 = window size
            {"kde.sigma", "0"},  // 0 = mean nearest-neighbor distance
            // decoder architecture (d_out follows the training masks)
            {"decoder.d_f", "3"},
            {"decoder.n_conv0", "256"},
            {"decoder.d0", "6"},
            // decoder training
            {"train.learning_rate", "1e-4"},
            {"train.beta1", "0.9"},
            {"train.beta2", "0.999"},
            {"train.epsilon", "1e-8"},
            {"train.epochs", "1000"},
            {"train.batch_size", "64"},
            // optimizer
            {"optimizer.memory", "10"},
            {"optimizer.max_iterations", "500"},
            {"optimizer.grad_tolerance", "1e-5"},
            {"optimizer.wolfe_c1", "1e-4"},
            {"optimizer.wolfe_c2", "0.9"},
            {"optimizer.empty_area_threshold", "10"},
            // initialization
            {"init.use_rotation", "0"},
            {"init.delta_kappa", "0.2617993877991494"},
            {"init.min_pixels", "10"},
            {"init.rot_prior_weight", "1.0"},
            {"init.rot_recon_weight", "1.0"},
            // synthetic data
            {"synth.image_size", "128"},
            {"synth.window", "48"},
            {"synth.n_shapes", "4"},
            {"synth.base_radius", "12.0"},
            {"synth.n_harmonics", "5"},
            {"synth.harmonic_amp", "0.3"},
            {"synth.overlap_target", "0.0"},
            {"synth.noise", "0.1"},
            {"synth.jitter", "2.0"},
            // evaluation
            {"eval.eps_d", "3"},
            {"eval.iou_min", "0.7"},
        };
        return d;
    }

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) throw ArgumentError("unknown config key: " + key);
        values_[key] = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ArgumentError("unknown config key: " + key);
        return it->second;
    }

    double get_double(const std::string& key) const {
        const std::string& s = get(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ArgumentError("config key " + key + " is not a number: '" + s + "'");
        }
    }

    int get_int(const std::string& key) const {
        const double v = get_double(key);
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw ArgumentError("config key " + key + " is not an integer");
        return i;
    }

    bool get_bool(const std::string& key) const {
        const std::string& s = get(key);
        if (s == "1" || s == "true" || s == "yes") return true;
        if (s == "0" || s == "false" || s == "no") return false;
        throw ArgumentError("config key " + key + " is not a boolean: '" + s + "'");
    }

    void load_file(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw DataError("cannot open config file: " + path.string());
        std::string line;
        int line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw FormatError(path.string() + ":" + std::to_string(line_no) +
                                  ": expected key=value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    /// Sorted key=value dump (stable across runs).
    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
        return out.str();
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    SmoothParams smooth_params() const {
        SmoothParams p;
        p.delta = get_double("smooth.delta");
        p.gamma = get_double("smooth.gamma");
        p.variant = smooth_max_variant_from_string(get("smooth.variant"));
        return p;
    }

private:
    std::map<std::string, std::string> values_;
};

} // namespace contourfit

#endif

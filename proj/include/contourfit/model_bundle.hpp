#ifndef CONTOURFIT_MODEL_BUNDLE_HPP
#define CONTOURFIT_MODEL_BUNDLE_HPP

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "contourfit/errors.hpp"
#include "contourfit/shape_model.hpp"
#include "contourfit/tensor_io.hpp"

namespace contourfit {

/// Fitted shape model as stored on disk: kernel-PCA encoder plus the KDE
/// prior over the training codes.
struct ShapeModelBundle {
    KpcaModel kpca;
    KdePrior kde;
};

inline void save_shape_model(const std::filesystem::path& dir, const ShapeModelBundle& bundle) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const KpcaModel& m = bundle.kpca;
    const int n = static_cast<int>(m.count());

    nlohmann::ordered_json j;
    j["kernel"] = to_string(m.spec.kind);
    j["rbf_scale"] = m.spec.rbf_scale;
    j["clamp"] = m.spec.clamp;
    j["c"] = m.c;
    j["reduced"] = m.reduced;
    j["dims"] = {m.dim_h, m.dim_w};
    j["n_train"] = n;
    j["sigma"] = bundle.kde.sigma;
    j["sigma_fallback"] = bundle.kde.sigma_fallback;

    Tensor beta({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(m.c)});
    Tensor codes({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(m.c)});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < m.c; ++k) {
            beta.data[static_cast<std::size_t>(i) * m.c + k] = m.beta(i, k);
            codes.data[static_cast<std::size_t>(i) * m.c + k] = m.train_codes(i, k);
        }
    write_cft(dir / "beta.cft", beta);
    write_cft(dir / "train_codes.cft", codes);

    Tensor lambda({static_cast<std::uint32_t>(m.c)});
    lambda.data.assign(m.lambda.begin(), m.lambda.end());
    write_cft(dir / "lambda.cft", lambda);

    Tensor phi({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(m.dim_h),
                static_cast<std::uint32_t>(m.dim_w)});
    std::size_t off = 0;
    for (const LevelSet& field : m.train_phi) {
        std::copy(field.data.begin(), field.data.end(), phi.data.begin() + off);
        off += field.size();
    }
    write_cft(dir / "train_phi.cft", phi);
    write_cft(dir / "mean_phi.cft", tensor_from_grid(m.mean_phi));

    Tensor centering({static_cast<std::uint32_t>(n + 1)});
    for (int i = 0; i < n; ++i) centering.data[i] = m.center_colmean[i];
    centering.data[n] = m.center_grand;
    write_cft(dir / "centering.cft", centering);

    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw DataError("cannot write " + (dir / "manifest.json").string());
    f << j.dump(2) << "\n";
}

inline ShapeModelBundle load_shape_model(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw DataError("missing model manifest: " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("model manifest is not valid JSON: " + std::string(e.what()));
    }

    ShapeModelBundle bundle;
    KpcaModel& m = bundle.kpca;
    int n = 0;
    try {
        m.spec.kind = shape_kernel_from_string(j.at("kernel").get<std::string>());
        m.spec.rbf_scale = j.at("rbf_scale").get<double>();
        m.spec.clamp = j.at("clamp").get<double>();
        m.c = j.at("c").get<int>();
        m.reduced = j.at("reduced").get<bool>();
        m.dim_h = j.at("dims").at(0).get<int>();
        m.dim_w = j.at("dims").at(1).get<int>();
        n = j.at("n_train").get<int>();
        bundle.kde.sigma = j.at("sigma").get<double>();
        bundle.kde.sigma_fallback = j.at("sigma_fallback").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("model manifest is missing fields: " + std::string(e.what()));
    }

    auto expect = [](const Tensor& t, std::vector<std::uint32_t> shape, const char* name) {
        if (t.shape != shape)
            throw FormatError(std::string("model tensor ") + name + " has an unexpected shape");
    };
    Tensor beta = read_cft(dir / "beta.cft");
    expect(beta, {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(m.c)}, "beta");
    Tensor codes = read_cft(dir / "train_codes.cft");
    expect(codes, {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(m.c)}, "train_codes");
    m.beta.resize(n, m.c);
    m.train_codes.resize(n, m.c);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < m.c; ++k) {
            m.beta(i, k) = beta.data[static_cast<std::size_t>(i) * m.c + k];
            m.train_codes(i, k) = codes.data[static_cast<std::size_t>(i) * m.c + k];
        }

    Tensor lambda = read_cft(dir / "lambda.cft");
    expect(lambda, {static_cast<std::uint32_t>(m.c)}, "lambda");
    m.lambda.assign(lambda.data.begin(), lambda.data.end());

    Tensor phi = read_cft(dir / "train_phi.cft");
    expect(phi,
           {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(m.dim_h),
            static_cast<std::uint32_t>(m.dim_w)},
           "train_phi");
    const std::size_t plane = static_cast<std::size_t>(m.dim_w) * m.dim_h;
    for (int i = 0; i < n; ++i) {
        LevelSet field(m.dim_w, m.dim_h);
        std::copy(phi.data.begin() + i * plane, phi.data.begin() + (i + 1) * plane,
                  field.data.begin());
        m.train_phi.push_back(std::move(field));
    }
    m.mean_phi = grid_from_tensor(read_cft(dir / "mean_phi.cft"), "mean_phi");
    if (m.mean_phi.width != m.dim_w || m.mean_phi.height != m.dim_h)
        throw FormatError("model tensor mean_phi has an unexpected shape");

    Tensor centering = read_cft(dir / "centering.cft");
    expect(centering, {static_cast<std::uint32_t>(n + 1)}, "centering");
    m.center_colmean.assign(centering.data.begin(), centering.data.end() - 1);
    m.center_grand = centering.data.back();

    bundle.kde.codes.assign(n, ShapeCode(m.c));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < m.c; ++k) bundle.kde.codes[i][k] = m.train_codes(i, k);
    return bundle;
}

} // namespace contourfit

#endif

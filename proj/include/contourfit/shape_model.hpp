#ifndef CONTOURFIT_SHAPE_MODEL_HPP
#define CONTOURFIT_SHAPE_MODEL_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"

namespace contourfit {

/// Coefficient vector of one shape under the learned model.
using ShapeCode = std::vector<double>;

enum class ShapeKernel {
    LinearOnSignedDistance,
    RbfOnSignedDistance,
};

inline const char* to_string(ShapeKernel k) {
    switch (k) {
        case ShapeKernel::LinearOnSignedDistance: return "linear-on-signed-distance";
        case ShapeKernel::RbfOnSignedDistance: return "rbf-on-signed-distance";
    }
    return "?";
}

inline ShapeKernel shape_kernel_from_string(const std::string& s) {
    if (s == "linear-on-signed-distance") return ShapeKernel::LinearOnSignedDistance;
    if (s == "rbf-on-signed-distance") return ShapeKernel::RbfOnSignedDistance;
    throw ArgumentError("unknown shape kernel: " + s);
}

/// Kernel acting on clamped signed-distance fields of masks. Both kernels
/// are Mercer on this domain: the linear kernel is a plain inner product,
/// the RBF a Gaussian of the field distance.
struct ShapeKernelSpec {
    ShapeKernel kind = ShapeKernel::LinearOnSignedDistance;
    double rbf_scale = 10.0; // used by the RBF kernel only
    double clamp = 0.0;      // 0 = choose the window size at fit time
};

/// Masks used to fit a shape model: uniform dimensions, non-empty, each
/// centroid within half a pixel (per axis) of the window center.
struct TrainingShapeSet {
    std::vector<BinaryMask> masks;

    void validate() const {
        if (masks.size() < 2) throw ArgumentError("need at least 2 shapes");
        const int w = masks.front().width, h = masks.front().height;
        for (std::size_t i = 0; i < masks.size(); ++i) {
            const BinaryMask& m = masks[i];
            if (m.width != w || m.height != h)
                throw DimensionError("training mask " + std::to_string(i) +
                                     " has inconsistent dimensions");
            double sx = 0.0, sy = 0.0, n = 0.0;
            for (int y = 0; y < m.height; ++y)
                for (int x = 0; x < m.width; ++x)
                    if (m.at(x, y)) {
                        sx += x;
                        sy += y;
                        n += 1.0;
                    }
            if (n == 0.0)
                throw ArgumentError("training mask " + std::to_string(i) + " is empty");
            const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
            if (std::abs(sx / n - cx) > 0.5 + 1e-9 || std::abs(sy / n - cy) > 0.5 + 1e-9)
                throw ArgumentError("training mask " + std::to_string(i) +
                                    " is not centered on the window");
        }
    }
};

/// Fitted kernel-PCA encoder over signed-distance fields.
struct KpcaModel {
    ShapeKernelSpec spec;
    int dim_w = 0, dim_h = 0; // training window size
    int c = 0;                // retained components
    bool reduced = false;     // true when fewer positive eigenvalues than requested

    Eigen::MatrixXd beta;        // N_T x c expansion coefficients, beta^k' K~ beta^k = 1
    std::vector<double> lambda;  // c eigenvalues of K~/N_T, descending
    Eigen::MatrixXd train_codes; // N_T x c codes of the training masks

    std::vector<LevelSet> train_phi; // clamped signed-distance fields
    LevelSet mean_phi;               // mean of train_phi

    std::vector<double> center_colmean; // per-column mean of the raw kernel matrix
    double center_grand = 0.0;          // grand mean of the raw kernel matrix

    std::size_t count() const { return train_phi.size(); }
};

namespace detail {

inline double kernel_eval(const ShapeKernelSpec& spec, const std::vector<double>& a,
                          const std::vector<double>& b) {
    switch (spec.kind) {
        case ShapeKernel::LinearOnSignedDistance: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
            return s;
        }
        case ShapeKernel::RbfOnSignedDistance: {
            double d2 = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                d2 += d * d;
            }
            return std::exp(-d2 / (2.0 * spec.rbf_scale * spec.rbf_scale));
        }
    }
    throw ArgumentError("kernel_eval: unknown kernel");
}

} // namespace detail

/// Fit the kernel-PCA encoder: build the kernel matrix over the training
/// fields, center it, solve the symmetric eigenproblem, and keep the top
/// `c` eigenpairs with positive eigenvalue (rescaled so that each
/// expansion vector has unit norm in feature space). If fewer positive
/// eigenvalues exist the model is returned with reduced `c` and the
/// `reduced` flag set; an eigenvalue negative beyond tolerance rejects
/// the kernel.
inline KpcaModel fit_kpca(const TrainingShapeSet& shapes, const ShapeKernelSpec& spec, int c) {
    shapes.validate();
    const int n = static_cast<int>(shapes.masks.size());
    if (c < 1) throw ArgumentError("fit_kpca: component count must be positive");
    if (c > n - 1) throw ArgumentError("fit_kpca: component count must be at most N_T - 1");

    KpcaModel model;
    model.spec = spec;
    model.dim_w = shapes.masks.front().width;
    model.dim_h = shapes.masks.front().height;
    if (model.spec.clamp <= 0.0)
        model.spec.clamp = static_cast<double>(std::max(model.dim_w, model.dim_h));

    model.train_phi.reserve(n);
    for (const BinaryMask& m : shapes.masks)
        model.train_phi.push_back(signed_distance(m, model.spec.clamp));

    model.mean_phi = Grid2D(model.dim_w, model.dim_h, 0.0);
    for (const LevelSet& phi : model.train_phi)
        for (std::size_t i = 0; i < phi.size(); ++i) model.mean_phi.data[i] += phi.data[i];
    for (double& v : model.mean_phi.data) v /= n;

    // raw kernel matrix and its centering statistics
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double v =
                detail::kernel_eval(model.spec, model.train_phi[i].data, model.train_phi[j].data);
            K(i, j) = v;
            K(j, i) = v;
        }
    model.center_colmean.resize(n);
    for (int j = 0; j < n; ++j) model.center_colmean[j] = K.col(j).mean();
    model.center_grand = K.mean();

    Eigen::MatrixXd Kc(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            Kc(i, j) =
                K(i, j) - model.center_colmean[i] - model.center_colmean[j] + model.center_grand;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Kc);
    if (solver.info() != Eigen::Success) throw KernelError("fit_kpca: eigendecomposition failed");
    const Eigen::VectorXd evals = solver.eigenvalues(); // ascending
    const Eigen::MatrixXd evecs = solver.eigenvectors();

    const double scale = std::max(std::abs(evals(0)), std::abs(evals(n - 1)));
    const double tol = 1e-10 * std::max(1.0, scale) * n;
    if (evals(0) < -tol)
        throw KernelError("fit_kpca: kernel matrix is not positive semi-definite");

    // positive eigenpairs available, capped at the requested count
    int kept = 0;
    for (int i = n - 1; i >= 0; --i)
        if (evals(i) > tol && kept < c) ++kept;
    model.reduced = kept < c;
    model.c = kept;
    if (kept == 0) throw KernelError("fit_kpca: no positive eigenvalues");

    model.beta.resize(n, kept);
    model.train_codes.resize(n, kept);
    model.lambda.resize(kept);
    for (int k = 0; k < kept; ++k) {
        const int src = n - 1 - k; // descending order
        const double mu = evals(src);
        model.lambda[k] = mu / n;
        Eigen::VectorXd u = evecs.col(src);
        // fix sign: largest-magnitude entry positive
        int arg = 0;
        for (int i = 1; i < n; ++i)
            if (std::abs(u(i)) > std::abs(u(arg))) arg = i;
        if (u(arg) < 0.0) u = -u;
        model.beta.col(k) = u / std::sqrt(mu);
        model.train_codes.col(k) = std::sqrt(mu) * u;
    }
    return model;
}

/// Centered kernel row of an out-of-sample field against the training set.
namespace detail {

inline Eigen::VectorXd centered_kernel_row(const KpcaModel& m, const std::vector<double>& phi) {
    const int n = static_cast<int>(m.count());
    Eigen::VectorXd k(n);
    for (int i = 0; i < n; ++i) k(i) = kernel_eval(m.spec, m.train_phi[i].data, phi);
    const double rowmean = k.mean();
    for (int i = 0; i < n; ++i) k(i) = k(i) - m.center_colmean[i] - rowmean + m.center_grand;
    return k;
}

} // namespace detail

/// Project a mask onto the retained principal components.
inline ShapeCode encode(const KpcaModel& model, const BinaryMask& mask) {
    if (mask.width != model.dim_w || mask.height != model.dim_h)
        throw DimensionError("encode: mask dimensions do not match the training window");
    const LevelSet phi = signed_distance(mask, model.spec.clamp);
    const Eigen::VectorXd kc = detail::centered_kernel_row(model, phi.data);
    const Eigen::VectorXd a = model.beta.transpose() * kc;
    return ShapeCode(a.data(), a.data() + a.size());
}

/// Training masks paired with their stored codes; the supervision set for
/// a decoder.
inline std::vector<std::pair<BinaryMask, ShapeCode>> encode_training_set(const KpcaModel& model) {
    std::vector<std::pair<BinaryMask, ShapeCode>> out;
    out.reserve(model.count());
    for (std::size_t i = 0; i < model.count(); ++i) {
        const LevelSet& phi = model.train_phi[i];
        BinaryMask m(model.dim_w, model.dim_h);
        for (std::size_t p = 0; p < phi.size(); ++p) m.data[p] = phi.data[p] > 0.0 ? 1 : 0;
        ShapeCode code(model.c);
        for (int k = 0; k < model.c; ++k) code[k] = model.train_codes(static_cast<int>(i), k);
        out.emplace_back(std::move(m), std::move(code));
    }
    return out;
}

// ---------------------------------------------------------------------------
// KDE prior on shape codes
// ---------------------------------------------------------------------------

struct KdePrior {
    std::vector<ShapeCode> codes;
    double sigma = 1.0;
    bool sigma_fallback = false; // set when all codes coincide
};

/// Gaussian KDE over the given codes. Without an explicit bandwidth,
/// sigma is the mean distance to the nearest other code; identical codes
/// fall back to sigma = 1 with a warning flag.
inline KdePrior fit_kde(const std::vector<ShapeCode>& codes, std::optional<double> sigma = {}) {
    if (codes.size() < 2) throw ArgumentError("fit_kde: need at least 2 codes");
    const std::size_t dim = codes.front().size();
    for (const ShapeCode& c : codes)
        if (c.size() != dim) throw DimensionError("fit_kde: inconsistent code lengths");

    KdePrior prior;
    prior.codes = codes;
    if (sigma) {
        if (*sigma <= 0.0) throw ArgumentError("fit_kde: sigma must be positive");
        prior.sigma = *sigma;
        return prior;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < codes.size(); ++j) {
            if (i == j) continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = codes[i][k] - codes[j][k];
                d2 += d * d;
            }
            best = std::min(best, d2);
        }
        total += std::sqrt(best);
    }
    const double mean_nn = total / static_cast<double>(codes.size());
    if (mean_nn > 0.0) {
        prior.sigma = mean_nn;
    } else {
        prior.sigma = 1.0;
        prior.sigma_fallback = true;
    }
    return prior;
}

struct LogPriorValue {
    double value = 0.0;
    std::vector<double> grad;
};

/// log sum_i exp(-||alpha - code_i||^2 / (2 sigma^2)), computed in shifted
/// form; the KDE normalization constant is dropped (it only shifts the
/// energy). The gradient is exact.
inline LogPriorValue kde_log_prior(const KdePrior& prior, const ShapeCode& alpha) {
    const std::size_t dim = prior.codes.front().size();
    if (alpha.size() != dim) throw DimensionError("kde_log_prior: code length mismatch");
    const double inv2s2 = 1.0 / (2.0 * prior.sigma * prior.sigma);

    std::vector<double> expo(prior.codes.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < prior.codes.size(); ++i) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double d = alpha[k] - prior.codes[i][k];
            d2 += d * d;
        }
        expo[i] = -d2 * inv2s2;
        m = std::max(m, expo[i]);
    }
    double sum = 0.0;
    std::vector<double> w(prior.codes.size());
    for (std::size_t i = 0; i < prior.codes.size(); ++i) {
        w[i] = std::exp(expo[i] - m);
        sum += w[i];
    }

    LogPriorValue out;
    out.value = m + std::log(sum);
    out.grad.assign(dim, 0.0);
    for (std::size_t i = 0; i < prior.codes.size(); ++i) {
        const double wi = w[i] / sum;
        for (std::size_t k = 0; k < dim; ++k)
            out.grad[k] += wi * (prior.codes[i][k] - alpha[k]) * 2.0 * inv2s2;
    }
    return out;
}

} // namespace contourfit

#endif

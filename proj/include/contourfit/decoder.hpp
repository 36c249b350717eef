#ifndef CONTOURFIT_DECODER_HPP
#define CONTOURFIT_DECODER_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/rng.hpp"
#include "contourfit/shape_model.hpp"
#include "contourfit/tensor_io.hpp"

namespace contourfit {

// ---------------------------------------------------------------------------
// Decoder family: code vector alpha -> level-set window.
//
// The linear variant is the classic eigen-field sum. The deep variant is a
// generator-style net: dense projection to d0 x d0 x n_conv0, then u
// stride-2 transposed-convolution stages (filters halved per stage, batch
// norm, leaky ReLU 0.2), and a final stride-1 single-channel convolution
// with tanh. Transposed convolutions use padding (d_f-1)/2 with one row and
// column of trailing output padding so each stage doubles the extent
// exactly; the final convolution uses zero ('same') padding and kernel d_f.
// ---------------------------------------------------------------------------

struct DeepDecoderSpec {
    int c = 32;       // latent count
    int d_f = 3;      // square filter size (odd)
    int n_conv0 = 256; // initial filter count
    int d0 = 6;       // initial spatial extent
    int d_out = 96;   // output extent

    int stages() const {
        int u = 0, e = d0;
        while (e < d_out) {
            e *= 2;
            ++u;
        }
        return u;
    }
    int stage_in_channels(int s) const { return n_conv0 >> s; }
    int stage_out_channels(int s) const { return n_conv0 >> (s + 1); }
    int stage_in_extent(int s) const { return d0 << s; }
    int stage_out_extent(int s) const { return d0 << (s + 1); }

    void validate() const {
        if (c < 1) throw ArgumentError("decoder spec: latent count must be positive");
        if (d_f < 1 || d_f % 2 == 0) throw ArgumentError("decoder spec: filter size must be odd");
        if (d0 < 1 || d_out < 2) throw ArgumentError("decoder spec: invalid extents");
        int u = 0, e = d0;
        while (e < d_out) {
            e *= 2;
            ++u;
        }
        if (e != d_out || u < 1)
            throw ArgumentError("decoder spec: d_out / d0 must be a power of two >= 2");
        if (n_conv0 % (1 << u) != 0)
            throw ArgumentError("decoder spec: n_conv0 must be divisible by 2^u");
    }
};

/// Filter count feeding each upsampling stage.
inline std::vector<int> stage_filter_counts(const DeepDecoderSpec& spec) {
    std::vector<int> out;
    for (int s = 0; s < spec.stages(); ++s) out.push_back(spec.stage_in_channels(s));
    return out;
}

struct BatchNormParams {
    std::vector<double> gamma, beta;
    std::vector<double> running_mean, running_var;
};

struct DeepStage {
    std::vector<double> kernel; // [C_in][C_out][d_f][d_f]
    std::vector<double> bias;   // [C_out]
    BatchNormParams bn;
};

struct DeepWeights {
    DeepDecoderSpec spec;
    std::vector<double> dense_w; // [M][c], M = n_conv0 * d0 * d0
    std::vector<double> dense_b; // [M]
    std::vector<DeepStage> stages;
    std::vector<double> final_kernel; // [C_last][1][d_f][d_f]
    std::vector<double> final_bias;   // [1]
};

struct LinearWeights {
    Grid2D mean_phi;
    std::vector<Grid2D> eigen_fields;
};

struct DecoderWeights {
    enum class Variant { Linear, Deep };
    Variant variant = Variant::Linear;
    LinearWeights linear;
    DeepWeights deep;

    int code_length() const {
        return variant == Variant::Linear ? static_cast<int>(linear.eigen_fields.size())
                                          : deep.spec.c;
    }
    int output_extent() const {
        return variant == Variant::Linear ? linear.mean_phi.width : deep.spec.d_out;
    }
};

inline const char* to_string(DecoderWeights::Variant v) {
    return v == DecoderWeights::Variant::Linear ? "linear" : "deep";
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.9;
inline constexpr double kLeakySlope = 0.2;
inline constexpr double kInitStd = 0.02;

namespace detail {

// Sampled weights are snapped to float32 so that saved bundles reload to
// the exact in-memory values.
inline double sample_init(Rng& rng) {
    return static_cast<double>(static_cast<float>(rng.normal(0.0, kInitStd)));
}

} // namespace detail

inline DecoderWeights init_deep_weights(const DeepDecoderSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    DecoderWeights w;
    w.variant = DecoderWeights::Variant::Deep;
    w.deep.spec = spec;
    const int m = spec.n_conv0 * spec.d0 * spec.d0;
    w.deep.dense_w.resize(static_cast<std::size_t>(m) * spec.c);
    for (double& v : w.deep.dense_w) v = detail::sample_init(rng);
    w.deep.dense_b.assign(m, 0.0);
    for (int s = 0; s < spec.stages(); ++s) {
        DeepStage st;
        const int ci = spec.stage_in_channels(s), co = spec.stage_out_channels(s);
        st.kernel.resize(static_cast<std::size_t>(ci) * co * spec.d_f * spec.d_f);
        for (double& v : st.kernel) v = detail::sample_init(rng);
        st.bias.assign(co, 0.0);
        st.bn.gamma.assign(co, 1.0);
        st.bn.beta.assign(co, 0.0);
        st.bn.running_mean.assign(co, 0.0);
        st.bn.running_var.assign(co, 1.0);
        w.deep.stages.push_back(std::move(st));
    }
    const int c_last = spec.n_conv0 >> spec.stages();
    w.deep.final_kernel.resize(static_cast<std::size_t>(c_last) * spec.d_f * spec.d_f);
    for (double& v : w.deep.final_kernel) v = detail::sample_init(rng);
    w.deep.final_bias.assign(1, 0.0);
    return w;
}

/// Zero-filled gradient container with the same tensor shapes.
inline DecoderWeights zero_like(const DecoderWeights& w) {
    DecoderWeights g = w;
    auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    if (g.variant == DecoderWeights::Variant::Deep) {
        zero(g.deep.dense_w);
        zero(g.deep.dense_b);
        for (DeepStage& st : g.deep.stages) {
            zero(st.kernel);
            zero(st.bias);
            zero(st.bn.gamma);
            zero(st.bn.beta);
            zero(st.bn.running_mean);
            zero(st.bn.running_var);
        }
        zero(g.deep.final_kernel);
        zero(g.deep.final_bias);
    } else {
        zero(g.linear.mean_phi.data);
        for (Grid2D& f : g.linear.eigen_fields) zero(f.data);
    }
    return g;
}

/// Visit every trainable tensor in a fixed order (running statistics are
/// not trainable and are skipped).
template <typename Fn>
inline void for_each_trainable(DeepWeights& w, Fn&& fn) {
    fn("dense.w", w.dense_w);
    fn("dense.b", w.dense_b);
    for (std::size_t s = 0; s < w.stages.size(); ++s) {
        const std::string p = "stage" + std::to_string(s);
        fn(p + ".kernel", w.stages[s].kernel);
        fn(p + ".bias", w.stages[s].bias);
        fn(p + ".bn.gamma", w.stages[s].bn.gamma);
        fn(p + ".bn.beta", w.stages[s].bn.beta);
    }
    fn("final.kernel", w.final_kernel);
    fn("final.bias", w.final_bias);
}

// ---------------------------------------------------------------------------
// Deep forward / backward
// ---------------------------------------------------------------------------

namespace detail {

using Planes = std::vector<double>; // [C][H][W]

struct DeepSampleCache {
    std::vector<Planes> act;      // act[0] dense reshape; act[s+1] post-lrelu of stage s
    std::vector<Planes> conv_out; // per stage, pre-BN
    std::vector<Planes> bn_out;   // per stage, post-BN (= lrelu input)
    Planes final_out;             // pre-tanh, [1][d_out][d_out]
};

struct DeepBatchCache {
    std::vector<DeepSampleCache> samples;
    // per stage batch statistics (training mode)
    std::vector<std::vector<double>> mean, var;
};

inline void dense_forward(const DeepWeights& w, const ShapeCode& alpha, Planes& out) {
    const int m = static_cast<int>(w.dense_b.size());
    const int c = w.spec.c;
    out.assign(m, 0.0);
    for (int r = 0; r < m; ++r) {
        const double* row = w.dense_w.data() + static_cast<std::size_t>(r) * c;
        double acc = w.dense_b[r];
        for (int k = 0; k < c; ++k) acc += row[k] * alpha[k];
        out[r] = acc;
    }
}

// stride-2 transposed convolution, padding (d_f-1)/2, trailing output padding 1
inline void tconv_forward(const DeepDecoderSpec& spec, int s, const std::vector<double>& kernel,
                          const std::vector<double>& bias, const Planes& in, Planes& out) {
    const int ci_n = spec.stage_in_channels(s), co_n = spec.stage_out_channels(s);
    const int hi = spec.stage_in_extent(s), ho = spec.stage_out_extent(s);
    const int df = spec.d_f, pad = (spec.d_f - 1) / 2;
    out.assign(static_cast<std::size_t>(co_n) * ho * ho, 0.0);
    for (int co = 0; co < co_n; ++co)
        std::fill_n(out.begin() + static_cast<std::size_t>(co) * ho * ho, ho * ho, bias[co]);
    for (int ci = 0; ci < ci_n; ++ci) {
        const double* inp = in.data() + static_cast<std::size_t>(ci) * hi * hi;
        for (int iy = 0; iy < hi; ++iy)
            for (int ix = 0; ix < hi; ++ix) {
                const double v = inp[iy * hi + ix];
                const int oy0 = 2 * iy - pad, ox0 = 2 * ix - pad;
                for (int co = 0; co < co_n; ++co) {
                    double* outp = out.data() + static_cast<std::size_t>(co) * ho * ho;
                    const double* kk =
                        kernel.data() + (static_cast<std::size_t>(ci) * co_n + co) * df * df;
                    for (int ky = 0; ky < df; ++ky) {
                        const int oy = oy0 + ky;
                        if (oy < 0 || oy >= ho) continue;
                        for (int kx = 0; kx < df; ++kx) {
                            const int ox = ox0 + kx;
                            if (ox < 0 || ox >= ho) continue;
                            outp[oy * ho + ox] += v * kk[ky * df + kx];
                        }
                    }
                }
            }
    }
}

// Derivatives for the transposed convolution; kernel/bias gradients are
// skipped when the pointers are null.
inline void tconv_backward(const DeepDecoderSpec& spec, int s, const std::vector<double>& kernel,
                           const Planes& in, const Planes& d_out, Planes& d_in,
                           std::vector<double>* d_kernel, std::vector<double>* d_bias) {
    const int ci_n = spec.stage_in_channels(s), co_n = spec.stage_out_channels(s);
    const int hi = spec.stage_in_extent(s), ho = spec.stage_out_extent(s);
    const int df = spec.d_f, pad = (spec.d_f - 1) / 2;
    d_in.assign(static_cast<std::size_t>(ci_n) * hi * hi, 0.0);
    if (d_bias)
        for (int co = 0; co < co_n; ++co) {
            const double* dp = d_out.data() + static_cast<std::size_t>(co) * ho * ho;
            double acc = 0.0;
            for (int i = 0; i < ho * ho; ++i) acc += dp[i];
            (*d_bias)[co] += acc;
        }
    for (int ci = 0; ci < ci_n; ++ci) {
        const double* inp = in.data() + static_cast<std::size_t>(ci) * hi * hi;
        double* dinp = d_in.data() + static_cast<std::size_t>(ci) * hi * hi;
        for (int iy = 0; iy < hi; ++iy)
            for (int ix = 0; ix < hi; ++ix) {
                const double v = inp[iy * hi + ix];
                const int oy0 = 2 * iy - pad, ox0 = 2 * ix - pad;
                double g_in_acc = 0.0;
                for (int co = 0; co < co_n; ++co) {
                    const double* dp = d_out.data() + static_cast<std::size_t>(co) * ho * ho;
                    const double* kk =
                        kernel.data() + (static_cast<std::size_t>(ci) * co_n + co) * df * df;
                    double* dk = d_kernel ? d_kernel->data() +
                                                (static_cast<std::size_t>(ci) * co_n + co) * df * df
                                          : nullptr;
                    for (int ky = 0; ky < df; ++ky) {
                        const int oy = oy0 + ky;
                        if (oy < 0 || oy >= ho) continue;
                        for (int kx = 0; kx < df; ++kx) {
                            const int ox = ox0 + kx;
                            if (ox < 0 || ox >= ho) continue;
                            const double g = dp[oy * ho + ox];
                            g_in_acc += g * kk[ky * df + kx];
                            if (dk) dk[ky * df + kx] += g * v;
                        }
                    }
                }
                dinp[iy * hi + ix] += g_in_acc;
            }
    }
}

// stride-1 'same' convolution down to one channel
inline void final_conv_forward(const DeepDecoderSpec& spec, const std::vector<double>& kernel,
                               double bias, const Planes& in, Planes& out) {
    const int ci_n = spec.n_conv0 >> spec.stages();
    const int h = spec.d_out;
    const int df = spec.d_f, pad = (spec.d_f - 1) / 2;
    out.assign(static_cast<std::size_t>(h) * h, bias);
    for (int ci = 0; ci < ci_n; ++ci) {
        const double* inp = in.data() + static_cast<std::size_t>(ci) * h * h;
        const double* kk = kernel.data() + static_cast<std::size_t>(ci) * df * df;
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < h; ++ox) {
                double acc = 0.0;
                for (int ky = 0; ky < df; ++ky) {
                    const int iy = oy + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < df; ++kx) {
                        const int ix = ox + kx - pad;
                        if (ix < 0 || ix >= h) continue;
                        acc += inp[iy * h + ix] * kk[ky * df + kx];
                    }
                }
                out[oy * h + ox] += acc;
            }
    }
}

inline void final_conv_backward(const DeepDecoderSpec& spec, const std::vector<double>& kernel,
                                const Planes& in, const Planes& d_out, Planes& d_in,
                                std::vector<double>* d_kernel, double* d_bias) {
    const int ci_n = spec.n_conv0 >> spec.stages();
    const int h = spec.d_out;
    const int df = spec.d_f, pad = (spec.d_f - 1) / 2;
    d_in.assign(static_cast<std::size_t>(ci_n) * h * h, 0.0);
    if (d_bias)
        for (int i = 0; i < h * h; ++i) *d_bias += d_out[i];
    for (int ci = 0; ci < ci_n; ++ci) {
        double* dinp = d_in.data() + static_cast<std::size_t>(ci) * h * h;
        const double* inp = in.data() + static_cast<std::size_t>(ci) * h * h;
        const double* kk = kernel.data() + static_cast<std::size_t>(ci) * df * df;
        double* dk = d_kernel ? d_kernel->data() + static_cast<std::size_t>(ci) * df * df : nullptr;
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < h; ++ox) {
                const double g = d_out[oy * h + ox];
                if (g == 0.0) continue;
                for (int ky = 0; ky < df; ++ky) {
                    const int iy = oy + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < df; ++kx) {
                        const int ix = ox + kx - pad;
                        if (ix < 0 || ix >= h) continue;
                        dinp[iy * h + ix] += g * kk[ky * df + kx];
                        if (dk) dk[ky * df + kx] += g * inp[iy * h + ix];
                    }
                }
            }
    }
}

/// Forward pass over a batch. In training mode batch statistics are used
/// for normalization and the running statistics are updated in `w`; in
/// inference mode the stored running statistics are used.
inline void deep_forward_batch(DeepWeights& w, const std::vector<const ShapeCode*>& codes,
                               bool training, DeepBatchCache& cache) {
    const DeepDecoderSpec& spec = w.spec;
    const int u = spec.stages();
    const std::size_t b = codes.size();
    cache.samples.resize(b);
    cache.mean.assign(u, {});
    cache.var.assign(u, {});

    for (std::size_t i = 0; i < b; ++i) {
        DeepSampleCache& sc = cache.samples[i];
        sc.act.resize(u + 1);
        sc.conv_out.resize(u);
        sc.bn_out.resize(u);
        dense_forward(w, *codes[i], sc.act[0]);
    }

    for (int s = 0; s < u; ++s) {
        const int co_n = spec.stage_out_channels(s);
        const int ho = spec.stage_out_extent(s);
        const int plane = ho * ho;
        for (std::size_t i = 0; i < b; ++i)
            tconv_forward(spec, s, w.stages[s].kernel, w.stages[s].bias, cache.samples[i].act[s],
                          cache.samples[i].conv_out[s]);

        std::vector<double>& mean = cache.mean[s];
        std::vector<double>& var = cache.var[s];
        if (training) {
            mean.assign(co_n, 0.0);
            var.assign(co_n, 0.0);
            const double inv_n = 1.0 / (static_cast<double>(b) * plane);
            for (std::size_t i = 0; i < b; ++i)
                for (int co = 0; co < co_n; ++co) {
                    const double* p =
                        cache.samples[i].conv_out[s].data() + static_cast<std::size_t>(co) * plane;
                    double acc = 0.0;
                    for (int k = 0; k < plane; ++k) acc += p[k];
                    mean[co] += acc * inv_n;
                }
            for (std::size_t i = 0; i < b; ++i)
                for (int co = 0; co < co_n; ++co) {
                    const double* p =
                        cache.samples[i].conv_out[s].data() + static_cast<std::size_t>(co) * plane;
                    double acc = 0.0;
                    for (int k = 0; k < plane; ++k) {
                        const double d = p[k] - mean[co];
                        acc += d * d;
                    }
                    var[co] += acc * inv_n;
                }
            for (int co = 0; co < co_n; ++co) {
                w.stages[s].bn.running_mean[co] =
                    kBnMomentum * w.stages[s].bn.running_mean[co] + (1.0 - kBnMomentum) * mean[co];
                w.stages[s].bn.running_var[co] =
                    kBnMomentum * w.stages[s].bn.running_var[co] + (1.0 - kBnMomentum) * var[co];
            }
        } else {
            mean = w.stages[s].bn.running_mean;
            var = w.stages[s].bn.running_var;
        }

        for (std::size_t i = 0; i < b; ++i) {
            DeepSampleCache& sc = cache.samples[i];
            sc.bn_out[s].resize(sc.conv_out[s].size());
            sc.act[s + 1].resize(sc.conv_out[s].size());
            for (int co = 0; co < co_n; ++co) {
                const double inv_std = 1.0 / std::sqrt(var[co] + kBnEpsilon);
                const double g = w.stages[s].bn.gamma[co], bt = w.stages[s].bn.beta[co];
                const double* p = sc.conv_out[s].data() + static_cast<std::size_t>(co) * plane;
                double* q = sc.bn_out[s].data() + static_cast<std::size_t>(co) * plane;
                double* a = sc.act[s + 1].data() + static_cast<std::size_t>(co) * plane;
                for (int k = 0; k < plane; ++k) {
                    const double y = g * (p[k] - mean[co]) * inv_std + bt;
                    q[k] = y;
                    a[k] = y > 0.0 ? y : kLeakySlope * y;
                }
            }
        }
    }

    for (std::size_t i = 0; i < b; ++i)
        final_conv_forward(spec, w.final_kernel, w.final_bias[0], cache.samples[i].act[u],
                           cache.samples[i].final_out);
}

/// Reverse pass matching deep_forward_batch. `d_final` holds dE/d(pre-tanh
/// output) per sample; `codes` are the forward inputs (needed for the dense
/// weight gradient). Gradients are accumulated into `grad` and, when
/// `d_codes` is non-null, per-sample code gradients are written there.
inline void deep_backward_batch(const DeepWeights& w, const DeepBatchCache& cache,
                                const std::vector<const ShapeCode*>& codes,
                                const std::vector<Planes>& d_final, bool training,
                                DeepWeights* grad, std::vector<ShapeCode>* d_codes) {
    const DeepDecoderSpec& spec = w.spec;
    const int u = spec.stages();
    const std::size_t b = cache.samples.size();
    const double slope = kLeakySlope;

    std::vector<Planes> d_act(b); // gradient w.r.t. act[s+1] while walking back

    for (std::size_t i = 0; i < b; ++i) {
        Planes d_in;
        final_conv_backward(spec, w.final_kernel, cache.samples[i].act[u], d_final[i], d_in,
                            grad ? &grad->final_kernel : nullptr,
                            grad ? &grad->final_bias[0] : nullptr);
        d_act[i] = std::move(d_in);
    }

    for (int s = u - 1; s >= 0; --s) {
        const int co_n = spec.stage_out_channels(s);
        const int ho = spec.stage_out_extent(s);
        const int plane = ho * ho;
        const std::vector<double>& mean = cache.mean[s];
        const std::vector<double>& var = cache.var[s];

        // leaky ReLU
        std::vector<Planes> d_bn(b);
        for (std::size_t i = 0; i < b; ++i) {
            const Planes& bn_out = cache.samples[i].bn_out[s];
            d_bn[i].resize(bn_out.size());
            for (std::size_t k = 0; k < bn_out.size(); ++k)
                d_bn[i][k] = d_act[i][k] * (bn_out[k] > 0.0 ? 1.0 : slope);
        }

        // batch norm
        std::vector<Planes> d_conv(b);
        for (std::size_t i = 0; i < b; ++i) d_conv[i].assign(d_bn[i].size(), 0.0);
        const double n_total = static_cast<double>(b) * plane;
        for (int co = 0; co < co_n; ++co) {
            const double inv_std = 1.0 / std::sqrt(var[co] + kBnEpsilon);
            const double g = w.stages[s].bn.gamma[co];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                const double* dy = d_bn[i].data() + static_cast<std::size_t>(co) * plane;
                const double* x = cache.samples[i].conv_out[s].data() +
                                  static_cast<std::size_t>(co) * plane;
                for (int k = 0; k < plane; ++k) {
                    sum_dy += dy[k];
                    sum_dy_xhat += dy[k] * (x[k] - mean[co]) * inv_std;
                }
            }
            if (grad) {
                grad->stages[s].bn.beta[co] += sum_dy;
                grad->stages[s].bn.gamma[co] += sum_dy_xhat;
            }
            for (std::size_t i = 0; i < b; ++i) {
                const double* dy = d_bn[i].data() + static_cast<std::size_t>(co) * plane;
                const double* x = cache.samples[i].conv_out[s].data() +
                                  static_cast<std::size_t>(co) * plane;
                double* dx = d_conv[i].data() + static_cast<std::size_t>(co) * plane;
                if (training) {
                    for (int k = 0; k < plane; ++k) {
                        const double xhat = (x[k] - mean[co]) * inv_std;
                        dx[k] = g * inv_std *
                                (dy[k] - sum_dy / n_total - xhat * sum_dy_xhat / n_total);
                    }
                } else {
                    for (int k = 0; k < plane; ++k) dx[k] = dy[k] * g * inv_std;
                }
            }
        }

        // transposed convolution
        for (std::size_t i = 0; i < b; ++i) {
            Planes d_in;
            tconv_backward(spec, s, w.stages[s].kernel, cache.samples[i].act[s], d_conv[i], d_in,
                           grad ? &grad->stages[s].kernel : nullptr,
                           grad ? &grad->stages[s].bias : nullptr);
            d_act[i] = std::move(d_in);
        }
    }

    // dense layer
    const int m = static_cast<int>(w.dense_b.size());
    const int c = spec.c;
    if (d_codes) d_codes->assign(b, ShapeCode(c, 0.0));
    for (std::size_t i = 0; i < b; ++i) {
        const Planes& dy = d_act[i];
        const double* alpha = codes[i]->data();
        for (int r = 0; r < m; ++r) {
            const double g = dy[r];
            if (g == 0.0) continue;
            const double* row = w.dense_w.data() + static_cast<std::size_t>(r) * c;
            if (d_codes) {
                double* da = (*d_codes)[i].data();
                for (int k = 0; k < c; ++k) da[k] += g * row[k];
            }
            if (grad) {
                double* dwr = grad->dense_w.data() + static_cast<std::size_t>(r) * c;
                for (int k = 0; k < c; ++k) dwr[k] += g * alpha[k];
                grad->dense_b[r] += g;
            }
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Public decode API
// ---------------------------------------------------------------------------

/// Decode a shape code into a level-set window (inference semantics: batch
/// norm uses running statistics). The deep variant returns tanh output in
/// (-1, 1); the linear variant is unbounded.
inline LevelSet decode(const DecoderWeights& weights, const ShapeCode& alpha) {
    if (static_cast<int>(alpha.size()) != weights.code_length())
        throw DimensionError("decode: code length does not match the decoder");
    if (weights.variant == DecoderWeights::Variant::Linear) {
        LevelSet out = weights.linear.mean_phi;
        for (std::size_t k = 0; k < weights.linear.eigen_fields.size(); ++k) {
            const Grid2D& f = weights.linear.eigen_fields[k];
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += alpha[k] * f.data[i];
        }
        return out;
    }
    DeepWeights& w = const_cast<DeepWeights&>(weights.deep); // running stats untouched in inference
    detail::DeepBatchCache cache;
    detail::deep_forward_batch(w, {&alpha}, false, cache);
    const int d = w.spec.d_out;
    LevelSet out(d, d);
    for (int i = 0; i < d * d; ++i) out.data[i] = std::tanh(cache.samples[0].final_out[i]);
    return out;
}

struct DecodeBackwardResult {
    std::vector<double> grad_alpha;
    DecoderWeights grad_theta; // same shapes as the weights
};

/// Exact reverse-mode derivatives of sum(upstream . decode(weights, alpha))
/// with respect to alpha and every trainable parameter. Set `want_theta`
/// to false to skip the (larger) parameter gradient.
inline DecodeBackwardResult decode_backward(const DecoderWeights& weights, const ShapeCode& alpha,
                                            const Grid2D& upstream, bool want_theta = true) {
    if (static_cast<int>(alpha.size()) != weights.code_length())
        throw DimensionError("decode_backward: code length does not match the decoder");
    const int d = weights.output_extent();
    if (upstream.width != d || upstream.height != d)
        throw DimensionError("decode_backward: upstream dimensions must match the output window");

    DecodeBackwardResult res;
    if (weights.variant == DecoderWeights::Variant::Linear) {
        res.grad_alpha.assign(alpha.size(), 0.0);
        for (std::size_t k = 0; k < weights.linear.eigen_fields.size(); ++k) {
            const Grid2D& f = weights.linear.eigen_fields[k];
            double acc = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) acc += upstream.data[i] * f.data[i];
            res.grad_alpha[k] = acc;
        }
        if (want_theta) {
            res.grad_theta = zero_like(weights);
            res.grad_theta.linear.mean_phi.data = upstream.data;
            for (std::size_t k = 0; k < weights.linear.eigen_fields.size(); ++k)
                for (std::size_t i = 0; i < upstream.size(); ++i)
                    res.grad_theta.linear.eigen_fields[k].data[i] = alpha[k] * upstream.data[i];
        }
        return res;
    }

    DeepWeights& w = const_cast<DeepWeights&>(weights.deep);
    detail::DeepBatchCache cache;
    detail::deep_forward_batch(w, {&alpha}, false, cache);

    std::vector<detail::Planes> d_final(1);
    d_final[0].resize(upstream.size());
    for (std::size_t i = 0; i < upstream.size(); ++i) {
        const double t = std::tanh(cache.samples[0].final_out[i]);
        d_final[0][i] = upstream.data[i] * (1.0 - t * t);
    }

    std::vector<ShapeCode> d_codes;
    if (want_theta) {
        res.grad_theta = zero_like(weights);
        detail::deep_backward_batch(w, cache, {&alpha}, d_final, false, &res.grad_theta.deep,
                                    &d_codes);
    } else {
        detail::deep_backward_batch(w, cache, {&alpha}, d_final, false, nullptr, &d_codes);
    }
    res.grad_alpha = std::move(d_codes[0]);
    return res;
}

/// Build the linear eigen-field decoder from a fitted linear-kernel model:
/// the mean field plus, per component, the beta-weighted combination of
/// de-meaned training fields.
inline DecoderWeights linear_decoder_from_kpca(const KpcaModel& model) {
    if (model.spec.kind != ShapeKernel::LinearOnSignedDistance)
        throw ArgumentError(
            "linear decoder requires the linear kernel (eigen-fields are not explicit otherwise)");
    DecoderWeights w;
    w.variant = DecoderWeights::Variant::Linear;
    w.linear.mean_phi = model.mean_phi;
    const int n = static_cast<int>(model.count());
    w.linear.eigen_fields.assign(model.c, Grid2D(model.dim_w, model.dim_h, 0.0));
    for (int k = 0; k < model.c; ++k) {
        Grid2D& f = w.linear.eigen_fields[k];
        for (int i = 0; i < n; ++i) {
            const double b = model.beta(i, k);
            const LevelSet& phi = model.train_phi[i];
            for (std::size_t p = 0; p < f.size(); ++p)
                f.data[p] += b * (phi.data[p] - model.mean_phi.data[p]);
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Weight bundles on disk
// ---------------------------------------------------------------------------

inline void save_weights(const std::filesystem::path& dir, const DecoderWeights& w) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::ordered_json j;
    j["variant"] = to_string(w.variant);
    if (w.variant == DecoderWeights::Variant::Linear) {
        j["c"] = w.linear.eigen_fields.size();
        j["d_out"] = w.linear.mean_phi.width;
        write_cft(dir / "mean_phi.cft", tensor_from_grid(w.linear.mean_phi));
        Tensor psi({static_cast<std::uint32_t>(w.linear.eigen_fields.size()),
                    static_cast<std::uint32_t>(w.linear.mean_phi.height),
                    static_cast<std::uint32_t>(w.linear.mean_phi.width)});
        std::size_t off = 0;
        for (const Grid2D& f : w.linear.eigen_fields) {
            std::copy(f.data.begin(), f.data.end(), psi.data.begin() + off);
            off += f.size();
        }
        write_cft(dir / "psi.cft", psi);
    } else {
        const DeepDecoderSpec& s = w.deep.spec;
        j["spec"] = {{"c", s.c}, {"d_f", s.d_f}, {"n_conv0", s.n_conv0},
                     {"d0", s.d0}, {"d_out", s.d_out}};
        j["u"] = s.stages();
        auto dump = [&](const std::string& name, const std::vector<double>& v,
                        std::vector<std::uint32_t> shape) {
            Tensor t(std::move(shape));
            t.data = v;
            write_cft(dir / (name + ".cft"), t);
        };
        const std::uint32_t m = static_cast<std::uint32_t>(w.deep.dense_b.size());
        dump("dense.w", w.deep.dense_w, {m, static_cast<std::uint32_t>(s.c)});
        dump("dense.b", w.deep.dense_b, {m});
        for (int st = 0; st < s.stages(); ++st) {
            const std::string p = "stage" + std::to_string(st);
            const auto ci = static_cast<std::uint32_t>(s.stage_in_channels(st));
            const auto co = static_cast<std::uint32_t>(s.stage_out_channels(st));
            const auto df = static_cast<std::uint32_t>(s.d_f);
            dump(p + ".kernel", w.deep.stages[st].kernel, {ci, co, df, df});
            dump(p + ".bias", w.deep.stages[st].bias, {co});
            dump(p + ".bn.gamma", w.deep.stages[st].bn.gamma, {co});
            dump(p + ".bn.beta", w.deep.stages[st].bn.beta, {co});
            dump(p + ".bn.mean", w.deep.stages[st].bn.running_mean, {co});
            dump(p + ".bn.var", w.deep.stages[st].bn.running_var, {co});
        }
        const auto cl = static_cast<std::uint32_t>(s.n_conv0 >> s.stages());
        dump("final.kernel", w.deep.final_kernel,
             {cl, 1, static_cast<std::uint32_t>(s.d_f), static_cast<std::uint32_t>(s.d_f)});
        dump("final.bias", w.deep.final_bias, {1});
    }
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw DataError("cannot write " + (dir / "manifest.json").string());
    f << j.dump(2) << "\n";
}

inline DecoderWeights load_weights(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream f(dir / "manifest.json");
    if (!f) throw DataError("missing weight manifest: " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("weight manifest is not valid JSON: " + std::string(e.what()));
    }
    DecoderWeights w;
    const std::string variant = j.value("variant", "");
    auto expect = [&](const Tensor& t, std::vector<std::uint32_t> shape, const char* name) {
        if (t.shape != shape) throw FormatError(std::string("weight tensor ") + name +
                                                " has an unexpected shape");
    };
    if (variant == "linear") {
        w.variant = DecoderWeights::Variant::Linear;
        w.linear.mean_phi = grid_from_tensor(read_cft(dir / "mean_phi.cft"), "mean_phi");
        const Tensor psi = read_cft(dir / "psi.cft");
        if (psi.shape.size() != 3 ||
            psi.shape[1] != static_cast<std::uint32_t>(w.linear.mean_phi.height) ||
            psi.shape[2] != static_cast<std::uint32_t>(w.linear.mean_phi.width))
            throw FormatError("weight tensor psi has an unexpected shape");
        const std::size_t plane = w.linear.mean_phi.size();
        for (std::uint32_t k = 0; k < psi.shape[0]; ++k) {
            Grid2D g(w.linear.mean_phi.width, w.linear.mean_phi.height);
            std::copy(psi.data.begin() + k * plane, psi.data.begin() + (k + 1) * plane,
                      g.data.begin());
            w.linear.eigen_fields.push_back(std::move(g));
        }
        if (j.contains("c") && j["c"].get<std::size_t>() != w.linear.eigen_fields.size())
            throw FormatError("weight manifest variant/shape mismatch");
        return w;
    }
    if (variant != "deep") throw FormatError("weight manifest variant mismatch: '" + variant + "'");
    w.variant = DecoderWeights::Variant::Deep;
    DeepDecoderSpec s;
    try {
        s.c = j.at("spec").at("c").get<int>();
        s.d_f = j.at("spec").at("d_f").get<int>();
        s.n_conv0 = j.at("spec").at("n_conv0").get<int>();
        s.d0 = j.at("spec").at("d0").get<int>();
        s.d_out = j.at("spec").at("d_out").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("weight manifest is missing spec fields: " + std::string(e.what()));
    }
    s.validate();
    w.deep.spec = s;
    const auto m = static_cast<std::uint32_t>(s.n_conv0 * s.d0 * s.d0);
    Tensor t = read_cft(dir / "dense.w.cft");
    expect(t, {m, static_cast<std::uint32_t>(s.c)}, "dense.w");
    w.deep.dense_w = std::move(t.data);
    t = read_cft(dir / "dense.b.cft");
    expect(t, {m}, "dense.b");
    w.deep.dense_b = std::move(t.data);
    for (int st = 0; st < s.stages(); ++st) {
        const std::string p = "stage" + std::to_string(st);
        const auto ci = static_cast<std::uint32_t>(s.stage_in_channels(st));
        const auto co = static_cast<std::uint32_t>(s.stage_out_channels(st));
        const auto df = static_cast<std::uint32_t>(s.d_f);
        DeepStage stage;
        t = read_cft(dir / (p + ".kernel.cft"));
        expect(t, {ci, co, df, df}, "stage kernel");
        stage.kernel = std::move(t.data);
        t = read_cft(dir / (p + ".bias.cft"));
        expect(t, {co}, "stage bias");
        stage.bias = std::move(t.data);
        t = read_cft(dir / (p + ".bn.gamma.cft"));
        expect(t, {co}, "bn gamma");
        stage.bn.gamma = std::move(t.data);
        t = read_cft(dir / (p + ".bn.beta.cft"));
        expect(t, {co}, "bn beta");
        stage.bn.beta = std::move(t.data);
        t = read_cft(dir / (p + ".bn.mean.cft"));
        expect(t, {co}, "bn mean");
        stage.bn.running_mean = std::move(t.data);
        t = read_cft(dir / (p + ".bn.var.cft"));
        expect(t, {co}, "bn var");
        stage.bn.running_var = std::move(t.data);
        for (double v : stage.bn.running_var)
            if (!(v > 0.0)) throw FormatError("bn running variance must be positive");
        w.deep.stages.push_back(std::move(stage));
    }
    const auto cl = static_cast<std::uint32_t>(s.n_conv0 >> s.stages());
    t = read_cft(dir / "final.kernel.cft");
    expect(t, {cl, 1, static_cast<std::uint32_t>(s.d_f), static_cast<std::uint32_t>(s.d_f)},
           "final.kernel");
    w.deep.final_kernel = std::move(t.data);
    t = read_cft(dir / "final.bias.cft");
    expect(t, {1}, "final.bias");
    w.deep.final_bias = std::move(t.data);
    return w;
}

} // namespace contourfit

#endif

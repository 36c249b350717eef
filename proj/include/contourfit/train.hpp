#ifndef CONTOURFIT_TRAIN_HPP
#define CONTOURFIT_TRAIN_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "contourfit/decoder.hpp"
#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/rng.hpp"
#include "contourfit/shape_model.hpp"

namespace contourfit {

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int epochs = 1000;
    int batch_size = 64;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (learning_rate <= 0.0) throw ArgumentError("train: learning rate must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ArgumentError("train: beta parameters must lie in [0, 1)");
        if (epochs < 1 || batch_size < 1) throw ArgumentError("train: epochs/batch size invalid");
    }
};

/// Supervised decoder training: per-pixel binary cross-entropy between
/// p = (tanh(z) + 1) / 2 and the target mask, minimized with Adam over
/// shuffled minibatches. Batch norm uses minibatch statistics while
/// training and keeps exponential running statistics for inference.
/// Everything is deterministic given the seed.
class DecoderTrainer {
public:
    DecoderTrainer(const DeepDecoderSpec& spec,
                   std::vector<std::pair<ShapeCode, BinaryMask>> pairs, const TrainConfig& config)
        : config_(config), pairs_(std::move(pairs)), rng_(config.rng_seed) {
        spec.validate();
        config_.validate();
        if (pairs_.empty()) throw ArgumentError("train_decoder: empty training pair set");
        for (const auto& [code, mask] : pairs_) {
            if (static_cast<int>(code.size()) != spec.c)
                throw DimensionError("train_decoder: code length does not match the spec");
            if (mask.width != spec.d_out || mask.height != spec.d_out)
                throw DimensionError("train_decoder: mask dimensions do not match d_out");
        }
        weights_ = init_deep_weights(spec, rng_.derive(0x5eed));
        grad_ = zero_like(weights_);
        moment1_ = zero_like(weights_);
        moment2_ = zero_like(weights_);
        order_.resize(pairs_.size());
        std::iota(order_.begin(), order_.end(), 0);
    }

    /// Run `epochs` further epochs; returns the mean per-pixel loss of each.
    std::vector<double> run(int epochs) {
        std::vector<double> history;
        history.reserve(epochs);
        for (int e = 0; e < epochs; ++e) history.push_back(run_epoch());
        return history;
    }

    const DecoderWeights& weights() const { return weights_; }
    int steps() const { return adam_t_; }

private:
    double run_epoch() {
        rng_.shuffle(order_);
        const std::size_t n = pairs_.size();
        const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
        double loss_sum = 0.0;
        std::size_t pix_count = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t stop = std::min(n, start + bs);
            loss_sum += run_batch(start, stop);
            pix_count += (stop - start) * pairs_.front().second.size();
        }
        return loss_sum / static_cast<double>(pix_count);
    }

    // returns the summed (not averaged) BCE over the batch
    double run_batch(std::size_t start, std::size_t stop) {
        const std::size_t b = stop - start;
        std::vector<const ShapeCode*> codes(b);
        for (std::size_t i = 0; i < b; ++i) codes[i] = &pairs_[order_[start + i]].first;

        detail::DeepBatchCache cache;
        detail::deep_forward_batch(weights_.deep, codes, true, cache);

        // p = (tanh(z)+1)/2 = sigmoid(2z); evaluate the loss on logits
        const std::size_t pix = pairs_.front().second.size();
        const double inv_total = 1.0 / (static_cast<double>(b) * pix);
        double loss = 0.0;
        std::vector<detail::Planes> d_final(b);
        for (std::size_t i = 0; i < b; ++i) {
            const BinaryMask& target = pairs_[order_[start + i]].second;
            d_final[i].resize(pix);
            for (std::size_t k = 0; k < pix; ++k) {
                const double t = 2.0 * cache.samples[i].final_out[k];
                const double y = target.data[k] ? 1.0 : 0.0;
                loss += std::max(t, 0.0) - t * y + std::log1p(std::exp(-std::abs(t)));
                const double sig = 1.0 / (1.0 + std::exp(-t));
                d_final[i][k] = 2.0 * (sig - y) * inv_total;
            }
        }

        auto zero = [](DeepWeights& g) {
            for_each_trainable(g, [](const std::string&, std::vector<double>& v) {
                std::fill(v.begin(), v.end(), 0.0);
            });
        };
        zero(grad_.deep);
        detail::deep_backward_batch(weights_.deep, cache, codes, d_final, true, &grad_.deep,
                                    nullptr);
        adam_step();
        return loss;
    }

    void adam_step() {
        ++adam_t_;
        const double b1 = config_.beta1, b2 = config_.beta2;
        const double corr1 = 1.0 - std::pow(b1, adam_t_);
        const double corr2 = 1.0 - std::pow(b2, adam_t_);
        const double lr = config_.learning_rate;
        const double eps = config_.epsilon;

        std::vector<std::vector<double>*> ws, gs, ms, vs;
        auto collect = [](DeepWeights& d, std::vector<std::vector<double>*>& out) {
            for_each_trainable(d, [&](const std::string&, std::vector<double>& v) {
                out.push_back(&v);
            });
        };
        collect(weights_.deep, ws);
        collect(grad_.deep, gs);
        collect(moment1_.deep, ms);
        collect(moment2_.deep, vs);
        for (std::size_t t = 0; t < ws.size(); ++t) {
            std::vector<double>& w = *ws[t];
            const std::vector<double>& g = *gs[t];
            std::vector<double>& m = *ms[t];
            std::vector<double>& v = *vs[t];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                const double mh = m[i] / corr1;
                const double vh = v[i] / corr2;
                w[i] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }

    TrainConfig config_;
    std::vector<std::pair<ShapeCode, BinaryMask>> pairs_;
    Rng rng_;
    DecoderWeights weights_, grad_, moment1_, moment2_;
    std::vector<std::size_t> order_;
    int adam_t_ = 0;
};

struct TrainResult {
    DecoderWeights weights;
    std::vector<double> loss_history; // per-epoch mean per-pixel BCE
};

inline TrainResult train_decoder(const DeepDecoderSpec& spec,
                                 const std::vector<std::pair<ShapeCode, BinaryMask>>& pairs,
                                 const TrainConfig& config) {
    DecoderTrainer trainer(spec, pairs, config);
    TrainResult res;
    res.loss_history = trainer.run(config.epochs);
    res.weights = trainer.weights();
    return res;
}

} // namespace contourfit

#endif

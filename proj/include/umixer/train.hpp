#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace umixer {

// Mean absolute error over all C*H entries (the per-channel L1 objective
// averaged over time as well, so the scale does not depend on H).
inline Tensor l1_loss(const Tensor& prediction, std::span<const double> target) {
    return mean_abs_error(prediction, target);
}

inline double l1_loss(const Matrix& y, const Matrix& y_hat) {
    if (y.rows != y_hat.rows || y.cols != y_hat.cols) throw DimensionError("l1_loss: shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) total += std::abs(y.data[i] - y_hat.data[i]);
    return total / static_cast<double>(y.data.size());
}

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;  // aligned with ModelParams::named()
    std::vector<std::vector<double>> v;

    static AdamState for_params(const NamedTensors& params, double lr) {
        AdamState s;
        s.lr = lr;
        for (const auto& [name, t] : params) {
            s.m.emplace_back(t.numel(), 0.0);
            s.v.emplace_back(t.numel(), 0.0);
        }
        return s;
    }
};

// Bias-corrected Adam. All gradients are checked before any parameter moves.
inline void adam_step(const NamedTensors& params, const std::vector<std::vector<double>>& grads, AdamState& state) {
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw ContractError("adam_step: gradients/moments not aligned with parameters");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (double g : grads[p]) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + params[p].first + "'");
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto values = Tensor(params[p].second).mutable_data();
        auto& m = state.m[p];
        auto& v = state.v[p];
        const auto& g = grads[p];
        for (std::size_t i = 0; i < values.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    std::size_t patience = 0;      // 0 disables early stopping
    double clip_norm = 0.0;        // 0 disables global-norm clipping
    double target_train_l1 = 0.0;  // stop once the epoch train L1 drops below; 0 disables

    void validate() const {
        if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
        if (!(lr >= 0.0)) throw ConfigError("train config: lr must be >= 0");
        if (!(clip_norm >= 0.0)) throw ConfigError("train config: clip_norm must be >= 0");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_l1 = 0.0;
    double val_l1 = 0.0;  // NaN when there is no validation data
    double wall_ms = 0.0;
};

struct TrainState {
    ModelParams params;
    AdamState adam;
    RngStream rng;
    std::size_t epochs_done = 0;
    std::vector<EpochRecord> history;
    ModelParams best;
    double best_score = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t epochs_since_best = 0;
    bool stopped = false;
};

inline TrainState init_train_state(const ModelConfig& cfg, const TrainConfig& tcfg) {
    TrainState s;
    s.rng = RngStream(tcfg.seed);
    s.params = init_params(cfg, s.rng);
    s.adam = AdamState::for_params(s.params.named(), tcfg.lr);
    s.best = s.params.clone();
    return s;
}

// Thrown when a batch produces a non-finite loss or gradient. The state the
// exception was raised from still holds the last finite parameters.
class TrainingDiverged : public NumericError {
public:
    using NumericError::NumericError;
};

inline double mean_l1(const ModelConfig& cfg, const ModelParams& params, std::span<const WindowSample> windows) {
    if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
    const auto preds = predict(cfg, params, windows);
    double total = 0.0;
    for (std::size_t i = 0; i < windows.size(); ++i) total += l1_loss(windows[i].y, preds[i]);
    return total / static_cast<double>(windows.size());
}

// Runs epochs until state.epochs_done reaches tcfg.epochs or a stop rule
// fires. Shuffling and dropout draw from state.rng, so a state restored from
// a checkpoint continues exactly as the uninterrupted run would.
inline void train(const ModelConfig& cfg, std::span<const WindowSample> train_windows,
                  std::span<const WindowSample> val_windows, const TrainConfig& tcfg, TrainState& state) {
    cfg.validate();
    tcfg.validate();
    if (train_windows.empty()) throw DataError("train: no training windows");
    state.adam.lr = tcfg.lr;
    const auto named = state.params.named();
    const std::size_t block = cfg.C * cfg.H;

    while (state.epochs_done < tcfg.epochs && !state.stopped) {
        const auto started = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(train_windows.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        state.rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
            std::vector<const Matrix*> inputs;
            std::vector<double> targets;
            targets.reserve((end - start) * block);
            for (std::size_t i = start; i < end; ++i) {
                const auto& w = train_windows[order[i]];
                inputs.push_back(&w.x);
                targets.insert(targets.end(), w.y.data.begin(), w.y.data.end());
            }
            for (const auto& [name, t] : named) t.zero_grad();
            auto fw = forward_batch(cfg, state.params, inputs, state.rng, true);
            const auto loss = l1_loss(fw.forecast, targets);
            if (!std::isfinite(loss.item())) {
                throw TrainingDiverged("train: non-finite loss in epoch " + std::to_string(state.epochs_done + 1));
            }
            backward(loss);
            std::vector<std::vector<double>> grads;
            grads.reserve(named.size());
            double sq_norm = 0.0;
            for (const auto& [name, t] : named) {
                grads.emplace_back(t.grad().begin(), t.grad().end());
                for (double g : grads.back()) sq_norm += g * g;
            }
            if (!std::isfinite(sq_norm)) {
                throw TrainingDiverged("train: non-finite gradient in epoch " + std::to_string(state.epochs_done + 1));
            }
            if (tcfg.clip_norm > 0.0 && std::sqrt(sq_norm) > tcfg.clip_norm) {
                const double factor = tcfg.clip_norm / std::sqrt(sq_norm);
                for (auto& g : grads)
                    for (auto& v : g) v *= factor;
            }
            adam_step(named, grads, state.adam);
            loss_sum += loss.item() * static_cast<double>(end - start);
        }

        EpochRecord rec;
        rec.epoch = state.epochs_done + 1;
        rec.train_l1 = loss_sum / static_cast<double>(train_windows.size());
        rec.val_l1 = mean_l1(cfg, state.params, val_windows);
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        state.history.push_back(rec);
        state.epochs_done += 1;

        const double score = val_windows.empty() ? rec.train_l1 : rec.val_l1;
        if (score < state.best_score) {
            state.best_score = score;
            state.best_epoch = rec.epoch;
            state.best.assign_values(state.params);
            state.epochs_since_best = 0;
        } else {
            state.epochs_since_best += 1;
        }
        if (tcfg.patience > 0 && state.epochs_since_best >= tcfg.patience) state.stopped = true;
        if (tcfg.target_train_l1 > 0.0 && rec.train_l1 < tcfg.target_train_l1) state.stopped = true;
    }
}

inline TrainState train(const ModelConfig& cfg, std::span<const WindowSample> train_windows,
                        std::span<const WindowSample> val_windows, const TrainConfig& tcfg) {
    auto state = init_train_state(cfg, tcfg);
    train(cfg, train_windows, val_windows, tcfg, state);
    return state;
}

}  // namespace umixer

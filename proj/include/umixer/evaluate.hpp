#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "train.hpp"

namespace umixer {

// Split, scaled long-term dataset ready for windowing.
struct PreparedData {
    std::string dataset_id;
    RawSeries train;
    RawSeries val;
    RawSeries test;
    ChannelScaler scaler;
    std::string fingerprint;  // hash of the split values
};

inline std::string series_fingerprint(std::initializer_list<const RawSeries*> parts) {
    std::string bytes;
    for (const auto* s : parts) {
        bytes.append(reinterpret_cast<const char*>(s->values.data.data()), s->values.data.size() * sizeof(double));
        bytes += '|';
    }
    return hex64(fnv1a64(bytes));
}

inline PreparedData prepare_long_term(const RawSeries& raw, const RunConfig& cfg, std::string dataset_id = "dataset") {
    auto split = chronological_split(raw, cfg.split);
    PreparedData out;
    out.dataset_id = std::move(dataset_id);
    out.scaler = cfg.scale == ScaleMode::train_zscore ? ChannelScaler::fit(split.train) : ChannelScaler::identity(raw.channels());
    out.train = out.scaler.transform(split.train);
    out.val = out.scaler.transform(split.val);
    out.test = out.scaler.transform(split.test);
    out.fingerprint = series_fingerprint({&out.train, &out.val, &out.test});
    return out;
}

// Windows of a segment; segments shorter than L+H yield none.
inline std::vector<WindowSample> segment_windows(const RawSeries& s, std::size_t L, std::size_t H, std::size_t stride) {
    if (s.length() < L + H) return {};
    return make_windows(s, L, H, stride);
}

struct MetricsReport {
    std::string dataset;
    std::string horizon;  // "96", ..., or "avg"
    std::map<std::string, double> metrics;
    std::size_t samples = 0;
    std::string fingerprint;       // model configuration
    std::string data_fingerprint;  // split values
    std::vector<std::string> warnings;
    std::map<std::string, double> alpha_summary;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["dataset"] = dataset;
        j["horizon"] = horizon;
        j["metrics"] = metrics;
        j["samples"] = samples;
        j["fingerprint"] = fingerprint;
        if (!data_fingerprint.empty()) j["data_fingerprint"] = data_fingerprint;
        if (!alpha_summary.empty()) j["alpha"] = alpha_summary;
        if (!warnings.empty()) j["warnings"] = warnings;
        return j;
    }
};

namespace detail {

inline std::map<std::string, double> summarize_alpha(const ForwardDiagnostics& diag) {
    if (diag.alpha.empty()) return {};
    double lo = INFINITY, hi = -INFINITY, total = 0.0;
    std::size_t n = 0;
    for (const auto& a : diag.alpha)
        for (double v : a) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            total += v;
            ++n;
        }
    return {{"min", lo}, {"max", hi}, {"mean", total / static_cast<double>(n)}};
}

inline std::vector<std::string> dedupe(const std::vector<std::string>& in) {
    std::map<std::string, std::size_t> counts;
    for (const auto& w : in) counts[w] += 1;
    std::vector<std::string> out;
    for (const auto& [w, c] : counts) out.push_back(w + " (x" + std::to_string(c) + ")");
    return out;
}

}  // namespace detail

// MSE/MAE over every entry of every test window.
inline MetricsReport evaluate_windows(const ModelConfig& cfg, const ModelParams& params, std::span<const WindowSample> windows,
                                      const std::string& dataset, const std::string& data_fingerprint) {
    MetricsReport rep;
    rep.dataset = dataset;
    rep.horizon = std::to_string(cfg.H);
    rep.fingerprint = model_fingerprint(cfg);
    rep.data_fingerprint = data_fingerprint;
    rep.samples = windows.size();
    if (windows.empty()) throw DataError("evaluate: no test windows (segment shorter than L+H)");
    ForwardDiagnostics diag;
    const auto preds = predict(cfg, params, windows, 64, &diag);
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        for (std::size_t k = 0; k < preds[i].data.size(); ++k) {
            const double e = windows[i].y.data[k] - preds[i].data[k];
            se += e * e;
            ae += std::abs(e);
        }
        count += preds[i].data.size();
    }
    rep.metrics["mse"] = se / static_cast<double>(count);
    rep.metrics["mae"] = ae / static_cast<double>(count);
    rep.alpha_summary = detail::summarize_alpha(diag);
    rep.warnings = detail::dedupe(diag.warnings);
    return rep;
}

inline MetricsReport average_report(std::span<const MetricsReport> rows) {
    MetricsReport avg;
    avg.dataset = rows.front().dataset;
    avg.horizon = "avg";
    avg.fingerprint = rows.front().fingerprint;
    avg.data_fingerprint = rows.front().data_fingerprint;
    for (const auto& r : rows) {
        avg.samples += r.samples;
        for (const auto& [k, v] : r.metrics) avg.metrics[k] += v / static_cast<double>(rows.size());
    }
    return avg;
}

// One trained model per horizon; appends the "avg" row (plain mean of the
// horizon rows).
struct HorizonModel {
    ModelConfig config;
    const ModelParams* params;
};

inline std::vector<MetricsReport> evaluate_long_term(std::span<const HorizonModel> models, const PreparedData& data,
                                                     std::size_t stride = 1) {
    std::vector<MetricsReport> rows;
    for (const auto& hm : models) {
        const auto windows = segment_windows(data.test, hm.config.L, hm.config.H, stride);
        rows.push_back(evaluate_windows(hm.config, *hm.params, windows, data.dataset_id, data.fingerprint));
    }
    if (!rows.empty()) rows.push_back(average_report(rows));
    return rows;
}

// Short-term protocol: the last H points of each series are held out; the
// model sees the preceding L points (left-padded with the first value when
// the history is shorter).
struct ShortTermSplit {
    std::vector<std::vector<double>> insample;
    std::vector<std::vector<double>> outsample;
};

inline ShortTermSplit split_short_term(std::span<const M4Series> series, std::size_t H) {
    ShortTermSplit out;
    for (const auto& s : series) {
        if (s.values.size() <= H) throw DataError("series '" + s.id + "' is not longer than the horizon");
        out.insample.emplace_back(s.values.begin(), s.values.end() - static_cast<std::ptrdiff_t>(H));
        out.outsample.emplace_back(s.values.end() - static_cast<std::ptrdiff_t>(H), s.values.end());
    }
    return out;
}

inline std::vector<WindowSample> short_term_windows(const ShortTermSplit& split, std::size_t L, std::size_t H, std::size_t stride) {
    std::vector<WindowSample> out;
    for (const auto& ins : split.insample) {
        if (ins.size() < L + H) continue;
        RawSeries s;
        s.channel_names = {"value"};
        s.values = Matrix(1, ins.size(), ins);
        auto w = make_windows(s, L, H, stride);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

inline Matrix last_input(std::span<const double> insample, std::size_t L) {
    Matrix x(1, L);
    const std::size_t n = insample.size();
    for (std::size_t t = 0; t < L; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(n) - static_cast<std::ptrdiff_t>(L) + static_cast<std::ptrdiff_t>(t);
        x(0, t) = insample[static_cast<std::size_t>(std::max<std::ptrdiff_t>(src, 0))];
    }
    return x;
}

// Averages SMAPE/MASE over series and normalizes by Naive2 for OWA.
inline MetricsReport evaluate_short_term(const ModelConfig& cfg, const ModelParams& params, const ShortTermSplit& split,
                                         std::size_t seasonality, const std::string& dataset) {
    MetricsReport rep;
    rep.dataset = dataset;
    rep.horizon = std::to_string(cfg.H);
    rep.fingerprint = model_fingerprint(cfg);
    std::vector<WindowSample> inputs;
    for (const auto& ins : split.insample) inputs.push_back({last_input(ins, cfg.L), Matrix(1, cfg.H)});
    ForwardDiagnostics diag;
    const auto preds = predict(cfg, params, inputs, 64, &diag);

    double smape_sum = 0.0, mase_sum = 0.0, smape_n2 = 0.0, mase_n2 = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < split.insample.size(); ++i) {
        const auto& ins = split.insample[i];
        const auto& truth = split.outsample[i];
        const auto naive = naive2_forecast(ins, seasonality, cfg.H);
        double scale = 0.0;
        if (ins.size() > seasonality) scale = seasonal_naive_scale(ins, seasonality);
        if (!(scale > 0.0)) {
            rep.warnings.push_back("mase undefined for series " + std::to_string(i) + ", excluded");
            continue;
        }
        smape_sum += smape(truth, preds[i].data);
        mase_sum += mase(truth, preds[i].data, ins, seasonality);
        smape_n2 += smape(truth, naive.forecast);
        mase_n2 += mase(truth, naive.forecast, ins, seasonality);
        ++used;
    }
    if (used == 0) throw DataError("evaluate_short_term: no series with a defined MASE");
    const double n = static_cast<double>(used);
    rep.metrics["smape"] = smape_sum / n;
    rep.metrics["mase"] = mase_sum / n;
    rep.metrics["smape_naive2"] = smape_n2 / n;
    rep.metrics["mase_naive2"] = mase_n2 / n;
    rep.metrics["owa"] = owa(smape_sum / n, mase_sum / n, smape_n2 / n, mase_n2 / n);
    rep.samples = used;
    rep.alpha_summary = detail::summarize_alpha(diag);
    auto warnings = detail::dedupe(diag.warnings);
    rep.warnings.insert(rep.warnings.end(), warnings.begin(), warnings.end());
    return rep;
}

struct RunOutcome {
    TrainState state;
    MetricsReport report;
};

// Trains on the train/val segments of `data` with cfg (seed overridden) and
// evaluates the best-validation parameters on the test segment.
inline RunOutcome train_and_evaluate(RunConfig cfg, const PreparedData& data, std::uint64_t seed) {
    cfg.train.seed = seed;
    cfg.model.C = data.train.channels();
    const auto train_w = segment_windows(data.train, cfg.model.L, cfg.model.H, cfg.window_stride);
    const auto val_w = segment_windows(data.val, cfg.model.L, cfg.model.H, cfg.window_stride);
    const auto test_w = segment_windows(data.test, cfg.model.L, cfg.model.H, cfg.window_stride);
    auto state = train(cfg.model, train_w, val_w, cfg.train);
    auto report = evaluate_windows(cfg.model, state.best, test_w, data.dataset_id, data.fingerprint);
    return {std::move(state), std::move(report)};
}

struct AblationVariant {
    std::string name;  // full | wo_ue | wo_sc
    RunConfig config;
    std::vector<MetricsReport> per_seed;
    bool unet_identity = false;

    double mean(const std::string& metric) const {
        double s = 0.0;
        for (const auto& r : per_seed) s += r.metrics.at(metric);
        return s / static_cast<double>(per_seed.size());
    }
    double stddev(const std::string& metric) const {
        const double m = mean(metric);
        double s = 0.0;
        for (const auto& r : per_seed) s += (r.metrics.at(metric) - m) * (r.metrics.at(metric) - m);
        return std::sqrt(s / static_cast<double>(per_seed.size()));
    }
};

struct AblationResult {
    std::string dataset;
    std::string data_fingerprint;
    std::vector<std::uint64_t> seeds;
    std::vector<AblationVariant> variants;

    const AblationVariant& variant(const std::string& name) const {
        for (const auto& v : variants) {
            if (v.name == name) return v;
        }
        throw ContractError("ablation: unknown variant " + name);
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["dataset"] = dataset;
        j["fingerprint"] = data_fingerprint;
        j["seeds"] = seeds;
        for (const auto& v : variants) {
            nlohmann::ordered_json jv;
            jv["model_fingerprint"] = model_fingerprint(v.config);
            jv["unet_identity"] = v.unet_identity;
            for (const std::string m : {"mse", "mae"}) {
                jv[m + "_mean"] = v.mean(m);
                jv[m + "_std"] = v.stddev(m);
            }
            for (const auto& r : v.per_seed) jv["per_seed"].push_back(r.to_json());
            j["variants"][v.name] = jv;
        }
        return j;
    }

    std::string to_csv() const {
        std::string out = "variant,seed,mse,mae\n";
        for (const auto& v : variants)
            for (std::size_t i = 0; i < v.per_seed.size(); ++i) {
                out += v.name + "," + std::to_string(seeds[i]) + "," + detail::format_double(v.per_seed[i].metrics.at("mse")) +
                       "," + detail::format_double(v.per_seed[i].metrics.at("mae")) + "\n";
            }
        return out;
    }
};

// full, wo_ue (M=0) and wo_sc (no stationarity correction) under an
// otherwise identical configuration and identical data.
inline AblationResult ablation_suite(const RunConfig& base, const PreparedData& data, std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw ConfigError("ablation: at least one seed required");
    AblationResult res;
    res.dataset = data.dataset_id;
    res.data_fingerprint = data.fingerprint;
    res.seeds.assign(seeds.begin(), seeds.end());
    RunConfig full = base, wo_ue = base, wo_sc = base;
    wo_ue.model.M = 0;
    wo_sc.model.sc_enabled = false;
    res.variants = {{"full", full, {}}, {"wo_ue", wo_ue, {}}, {"wo_sc", wo_sc, {}}};
    for (auto seed : seeds) {
        for (auto& v : res.variants) {
            auto outcome = train_and_evaluate(v.config, data, seed);
            v.per_seed.push_back(std::move(outcome.report));
        }
    }
    for (auto& v : res.variants) {
        RunConfig probe = v.config;
        probe.model.C = data.train.channels();
        RngStream rng(0);
        const auto params = init_params(probe.model, rng);
        const auto windows = segment_windows(data.test, probe.model.L, probe.model.H, 1);
        ForwardDiagnostics diag;
        if (!windows.empty()) predict(probe.model, params, std::span(windows).first(1), 1, &diag);
        v.unet_identity = diag.unet_identity;
    }
    return res;
}

struct SweepCell {
    std::size_t levels = 0;
    std::size_t patch_length = 0;
    MetricsReport report;
    double wall_ms = 0.0;
};

// Full M x P grid trained with the base seed; wall-clock kept per cell.
inline std::vector<SweepCell> sensitivity_sweep(const RunConfig& base, const PreparedData& data) {
    for (auto P : base.sweep_patch_lengths) {
        if (P > base.model.L) throw ConfigError("sweep: patch length " + std::to_string(P) + " exceeds L");
    }
    std::vector<SweepCell> cells;
    for (auto M : base.sweep_levels) {
        for (auto P : base.sweep_patch_lengths) {
            RunConfig cfg = base;
            cfg.model.M = M;
            cfg.model.P = P;
            const auto started = std::chrono::steady_clock::now();
            auto outcome = train_and_evaluate(cfg, data, base.train.seed);
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
            cells.push_back({M, P, std::move(outcome.report), ms});
        }
    }
    return cells;
}

inline std::string sweep_metrics_csv(std::span<const SweepCell> cells) {
    std::string out = "levels,patch_length,mse,mae\n";
    for (const auto& c : cells) {
        out += std::to_string(c.levels) + "," + std::to_string(c.patch_length) + "," +
               detail::format_double(c.report.metrics.at("mse")) + "," + detail::format_double(c.report.metrics.at("mae")) + "\n";
    }
    return out;
}

inline std::string sweep_timing_csv(std::span<const SweepCell> cells) {
    std::string out = "levels,patch_length,wall_ms\n";
    for (const auto& c : cells) {
        out += std::to_string(c.levels) + "," + std::to_string(c.patch_length) + "," + detail::format_double(c.wall_ms) + "\n";
    }
    return out;
}

}  // namespace umixer

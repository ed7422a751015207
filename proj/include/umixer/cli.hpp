#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "evaluate.hpp"
#include "selftest.hpp"
#include "train.hpp"

namespace umixer {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumeric = 4,
};

inline constexpr const char* kOutputDirEnv = "UMIXER_OUTPUT_DIR";

struct CliRequest {
    std::string command;
    std::string config_file;
    std::vector<std::string> sets;  // "key=value"
    std::vector<std::string> checkpoints;
    std::string input;
    bool holdout = false;
};

inline const std::vector<std::string>& cli_commands() {
    static const std::vector<std::string> names{"train", "evaluate", "forecast", "ablate", "sweep", "gradcheck", "selftest"};
    return names;
}

// Precedence, lowest first: built-in defaults, config file, output-directory
// environment variable, --set flags.
inline RunConfig resolve_config(const CliRequest& req) {
    RunConfig cfg;
    if (!req.config_file.empty()) load_config_file(cfg, req.config_file);
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) cfg.output_dir = env;
    std::vector<std::pair<std::string, std::string>> settings;
    for (const auto& s : req.sets) settings.push_back(parse_setting(s));
    apply_settings(cfg, settings);
    return cfg;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline std::filesystem::path prepare_output(const RunConfig& cfg) {
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "config.txt", config_to_text(cfg));
    return dir;
}

inline std::string history_jsonl(const std::vector<EpochRecord>& history) {
    std::string out;
    for (const auto& r : history) {
        nlohmann::ordered_json j;
        j["epoch"] = r.epoch;
        j["train_l1"] = r.train_l1;
        if (std::isfinite(r.val_l1)) {
            j["val_l1"] = r.val_l1;
        } else {
            j["val_l1"] = nullptr;
        }
        j["wall_ms"] = r.wall_ms;
        out += j.dump() + "\n";
    }
    return out;
}

inline std::vector<std::filesystem::path> checkpoint_paths(const CliRequest& req, const RunConfig& cfg) {
    if (req.checkpoints.empty()) return {std::filesystem::path(cfg.output_dir) / "model.ckpt"};
    return {req.checkpoints.begin(), req.checkpoints.end()};
}

inline void require_compatible(const RunConfig& run, const Checkpoint& ck, const std::string& path) {
    const auto expected = model_fingerprint(run.model);
    const auto found = model_fingerprint(ck.config.model);
    if (expected != found) {
        throw ConfigError("checkpoint '" + path + "' has model fingerprint " + found + " but the configuration has " +
                          expected);
    }
}

inline std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(6) << v;
    return ss.str();
}

}  // namespace detail

inline int cmd_train(const CliRequest& req, std::ostream& out) {
    RunConfig cfg = resolve_config(req);
    std::vector<WindowSample> train_w, val_w;
    ChannelScaler scaler;
    if (cfg.data_kind == DataKind::m4) {
        const auto series = load_short_series(cfg.data_path);
        cfg.model.C = 1;
        train_w = short_term_windows(split_short_term(series, cfg.model.H), cfg.model.L, cfg.model.H, cfg.window_stride);
        scaler = ChannelScaler::identity(1);
    } else {
        const auto data = prepare_long_term(cfg);
        cfg.model.C = data.train.channels();
        train_w = segment_windows(data.train, cfg.model.L, cfg.model.H, cfg.window_stride);
        val_w = segment_windows(data.val, cfg.model.L, cfg.model.H, cfg.window_stride);
        scaler = data.scaler;
    }
    cfg.model.validate();
    const auto dir = detail::prepare_output(cfg);

    Checkpoint ck{kCheckpointVersion, cfg, scaler, init_train_state(cfg.model, cfg.train)};
    try {
        train(cfg.model, train_w, val_w, cfg.train, ck.state);
    } catch (const TrainingDiverged&) {
        save_checkpoint(dir / "last_good.ckpt", ck);
        detail::write_file(dir / "history.jsonl", detail::history_jsonl(ck.state.history));
        throw;
    }
    save_checkpoint(dir / "model.ckpt", ck);
    detail::write_file(dir / "history.jsonl", detail::history_jsonl(ck.state.history));
    for (const auto& r : ck.state.history) {
        out << "epoch " << r.epoch << " train_l1 " << detail::fmt(r.train_l1) << " val_l1 "
            << (std::isfinite(r.val_l1) ? detail::fmt(r.val_l1) : "n/a") << "\n";
    }
    out << "best epoch " << ck.state.best_epoch << ", checkpoint " << (dir / "model.ckpt").string() << "\n";
    return kExitOk;
}

inline int cmd_evaluate(const CliRequest& req, std::ostream& out) {
    RunConfig cfg = resolve_config(req);
    std::vector<MetricsReport> rows;
    if (cfg.data_kind == DataKind::m4) {
        const auto series = load_short_series(cfg.data_path);
        cfg.model.C = 1;
        const auto dir = detail::prepare_output(cfg);
        for (const auto& path : detail::checkpoint_paths(req, cfg)) {
            const auto ck = load_checkpoint(path);
            detail::require_compatible(cfg, ck, path.string());
            const auto split = split_short_term(series, ck.config.model.H);
            rows.push_back(evaluate_short_term(ck.config.model, ck.state.best, split, cfg.seasonality, dataset_id(cfg.data_path)));
        }
        nlohmann::ordered_json j;
        for (const auto& r : rows) j["reports"].push_back(r.to_json());
        detail::write_file(dir / "metrics.json", j.dump(2) + "\n");
        for (const auto& r : rows) {
            out << "H=" << r.horizon << " smape " << detail::fmt(r.metrics.at("smape")) << " mase "
                << detail::fmt(r.metrics.at("mase")) << " owa " << detail::fmt(r.metrics.at("owa")) << "\n";
        }
        return kExitOk;
    }

    const auto data = prepare_long_term(cfg);
    cfg.model.C = data.train.channels();
    const auto dir = detail::prepare_output(cfg);
    std::vector<Checkpoint> loaded;
    for (const auto& path : detail::checkpoint_paths(req, cfg)) {
        loaded.push_back(load_checkpoint(path));
        detail::require_compatible(cfg, loaded.back(), path.string());
    }
    std::vector<HorizonModel> models;
    for (const auto& ck : loaded) models.push_back({ck.config.model, &ck.state.best});
    rows = evaluate_long_term(models, data, 1);
    if (models.size() == 1) rows.pop_back();

    nlohmann::ordered_json j;
    for (const auto& r : rows) j["reports"].push_back(r.to_json());
    detail::write_file(dir / "metrics.json", j.dump(2) + "\n");
    for (const auto& r : rows) {
        out << "H=" << r.horizon << " mse " << detail::fmt(r.metrics.at("mse")) << " mae " << detail::fmt(r.metrics.at("mae"))
            << " windows " << r.samples << "\n";
        for (const auto& w : r.warnings) out << "  warning: " << w << "\n";
    }
    return kExitOk;
}

inline int cmd_forecast(const CliRequest& req, std::ostream& out) {
    RunConfig cfg = resolve_config(req);
    const auto ck = load_checkpoint(detail::checkpoint_paths(req, cfg).front());
    const auto& model = ck.config.model;
    if (req.input.empty()) throw ConfigError("forecast: --input is required");
    const auto series = load_long_series(req.input);
    if (series.channels() != model.C) {
        throw DataError("forecast: input has " + std::to_string(series.channels()) + " channels, the model expects " +
                        std::to_string(model.C));
    }
    const std::size_t tail = req.holdout ? model.H : 0;
    const std::size_t needed = model.L + tail;
    if (series.length() < needed) {
        throw DataError("forecast: input has " + std::to_string(series.length()) + " rows, at least " +
                        std::to_string(needed) + " required (L=" + std::to_string(model.L) +
                        (req.holdout ? ", plus H held out)" : ")"));
    }
    const std::size_t end = series.length() - tail;
    const auto window = ck.scaler.transform(slice_time(series, end - model.L, end));
    RngStream rng(0);
    const auto fc = model_forward(window.values, ck.state.best, model, rng, false);
    const Matrix forecast = ck.scaler.inverse(fc.forecast);

    cfg.model = model;
    const auto dir = detail::prepare_output(cfg);
    std::string csv;
    for (std::size_t c = 0; c < model.C; ++c) csv += (c ? "," : "") + series.channel_names[c];
    csv += "\n";
    for (std::size_t t = 0; t < model.H; ++t) {
        for (std::size_t c = 0; c < model.C; ++c) csv += (c ? "," : "") + detail::format_double(forecast(c, t));
        csv += "\n";
    }
    detail::write_file(dir / "forecast.csv", csv);

    nlohmann::ordered_json plot;
    plot["channels"] = series.channel_names;
    plot["input_length"] = model.L;
    plot["horizon"] = model.H;
    for (std::size_t c = 0; c < model.C; ++c) {
        nlohmann::ordered_json ch;
        const auto row = series.values.row(c);
        ch["history"] = std::vector<double>(row.begin() + static_cast<std::ptrdiff_t>(end - model.L),
                                            row.begin() + static_cast<std::ptrdiff_t>(end));
        ch["forecast"] = std::vector<double>(forecast.row(c).begin(), forecast.row(c).end());
        if (req.holdout) ch["truth"] = std::vector<double>(row.begin() + static_cast<std::ptrdiff_t>(end), row.end());
        plot["series"].push_back(ch);
    }
    detail::write_file(dir / "plot.json", plot.dump(2) + "\n");
    out << "forecast " << model.C << "x" << model.H << " written to " << (dir / "forecast.csv").string() << "\n";
    return kExitOk;
}

inline int cmd_ablate(const CliRequest& req, std::ostream& out) {
    RunConfig cfg = resolve_config(req);
    const auto data = prepare_long_term(cfg);
    cfg.model.C = data.train.channels();
    const auto dir = detail::prepare_output(cfg);
    const auto result = ablation_suite(cfg, data, cfg.seeds);
    detail::write_file(dir / "ablation.json", result.to_json().dump(2) + "\n");
    detail::write_file(dir / "ablation.csv", result.to_csv());
    for (const auto& v : result.variants) {
        out << v.name << " mse " << detail::fmt(v.mean("mse")) << " +- " << detail::fmt(v.stddev("mse")) << " mae "
            << detail::fmt(v.mean("mae")) << " +- " << detail::fmt(v.stddev("mae")) << "\n";
    }
    return kExitOk;
}

inline int cmd_sweep(const CliRequest& req, std::ostream& out) {
    RunConfig cfg = resolve_config(req);
    const auto data = prepare_long_term(cfg);
    cfg.model.C = data.train.channels();
    const auto dir = detail::prepare_output(cfg);
    const auto cells = sensitivity_sweep(cfg, data);
    nlohmann::ordered_json j;
    for (const auto& c : cells) {
        auto r = c.report.to_json();
        r["levels"] = c.levels;
        r["patch_length"] = c.patch_length;
        j["cells"].push_back(r);
    }
    detail::write_file(dir / "sweep.json", j.dump(2) + "\n");
    detail::write_file(dir / "sweep.csv", sweep_metrics_csv(cells));
    detail::write_file(dir / "sweep_timing.csv", sweep_timing_csv(cells));
    for (const auto& c : cells) {
        out << "M=" << c.levels << " P=" << c.patch_length << " mse " << detail::fmt(c.report.metrics.at("mse")) << " mae "
            << detail::fmt(c.report.metrics.at("mae")) << " " << detail::fmt(c.wall_ms) << " ms\n";
    }
    return kExitOk;
}

inline int cmd_gradcheck(const CliRequest& req, std::ostream& out) {
    RunConfig cfg = resolve_config(req);
    const auto dir = detail::prepare_output(cfg);
    const auto report = model_grad_check(cfg.model, cfg.train.seed);
    nlohmann::ordered_json j;
    j["tolerance"] = report.tolerance;
    j["passed"] = report.passed;
    j["max_rel_error"] = report.max_rel_error();
    for (const auto& e : report.entries) {
        j["parameters"].push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"worst_index", e.worst_index}});
    }
    detail::write_file(dir / "gradcheck.json", j.dump(2) + "\n");
    for (const auto& e : report.entries) {
        out << (e.max_rel_error < report.tolerance ? "ok   " : "FAIL ") << e.name << " " << e.max_rel_error << "\n";
    }
    out << (report.passed ? "gradcheck passed" : "gradcheck FAILED") << ", max rel error " << report.max_rel_error() << "\n";
    return report.passed ? kExitOk : kExitNumeric;
}

inline int cmd_selftest(std::ostream& out) {
    bool all = true;
    for (const auto& check : run_selftest()) {
        out << (check.passed ? "PASS " : "FAIL ") << check.name << " (" << check.detail << ")\n";
        all = all && check.passed;
    }
    return all ? kExitOk : kExitFailure;
}

// Runs one command and maps failures onto exit codes.
inline int run_command(const CliRequest& req, std::ostream& out, std::ostream& err) {
    try {
        if (req.command == "train") return cmd_train(req, out);
        if (req.command == "evaluate") return cmd_evaluate(req, out);
        if (req.command == "forecast") return cmd_forecast(req, out);
        if (req.command == "ablate") return cmd_ablate(req, out);
        if (req.command == "sweep") return cmd_sweep(req, out);
        if (req.command == "gradcheck") return cmd_gradcheck(req, out);
        if (req.command == "selftest") return cmd_selftest(out);
        err << "error: unknown command '" << req.command << "'\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParameterError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kExitData;
    } catch (const DimensionError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace umixer

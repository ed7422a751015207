#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "correction.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "train.hpp"

namespace umixer {

enum class DataKind { long_csv, m4 };
enum class ScaleMode { train_zscore, none };

// Everything a command needs; the text snapshot written by write_config()
// reproduces the run.
struct RunConfig {
    std::string data_path;
    DataKind data_kind = DataKind::long_csv;
    SplitRatios split{6.0, 2.0, 2.0};
    ScaleMode scale = ScaleMode::train_zscore;
    std::size_t window_stride = 1;
    std::size_t seasonality = 1;  // m for MASE / Naive2

    ModelConfig model;
    TrainConfig train;

    std::vector<std::size_t> horizons{96, 192, 336, 720};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<std::size_t> sweep_levels{0, 1, 2, 3, 4};
    std::vector<std::size_t> sweep_patch_lengths{8, 16, 24, 32};

    std::string output_dir = "umixer_out";
};

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + text + "'");
    }
    return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
    double v = 0.0;
    if (!parse_double(text, v)) throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_unsigned<T>(key, std::string(trim(item))));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

template <typename E>
E parse_enum(const std::string& key, const std::string& text, std::initializer_list<std::pair<const char*, E>> options) {
    std::string allowed;
    for (const auto& [name, value] : options) {
        if (text == name) return value;
        allowed += (allowed.empty() ? "" : "|") + std::string(name);
    }
    throw ConfigError("config key '" + key + "': expected one of " + allowed + ", got '" + text + "'");
}

template <typename E>
std::string format_enum(E value, std::initializer_list<std::pair<const char*, E>> options) {
    for (const auto& [name, v] : options) {
        if (v == value) return name;
    }
    return "?";
}

struct KeySpec {
    std::string name;
    bool architecture;  // part of the model fingerprint
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define UMIXER_SIZE_KEY(key, arch, field)                                                                  \
    KeySpec {                                                                                              \
        key, arch, [](const RunConfig& c) { return std::to_string(c.field); },                             \
            [](RunConfig& c, const std::string& v) { c.field = parse_unsigned<std::size_t>(key, v); }      \
    }
#define UMIXER_REAL_KEY(key, arch, field)                                                                  \
    KeySpec {                                                                                              \
        key, arch, [](const RunConfig& c) { return format_double(c.field); },                              \
            [](RunConfig& c, const std::string& v) { c.field = parse_real(key, v); }                       \
    }
#define UMIXER_BOOL_KEY(key, arch, field)                                                                  \
    KeySpec {                                                                                              \
        key, arch, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); },             \
            [](RunConfig& c, const std::string& v) { c.field = parse_bool(key, v); }                       \
    }
#define UMIXER_ENUM_KEY(key, arch, field, ...)                                                             \
    KeySpec {                                                                                              \
        key, arch, [](const RunConfig& c) { return format_enum(c.field, {__VA_ARGS__}); },                 \
            [](RunConfig& c, const std::string& v) { c.field = parse_enum(key, v, {__VA_ARGS__}); }        \
    }

using DataKindOpt = std::pair<const char*, DataKind>;
using ScaleOpt = std::pair<const char*, ScaleMode>;
using SkipOpt = std::pair<const char*, SkipMode>;
using DecOpt = std::pair<const char*, DecoderSkip>;
using CorrOpt = std::pair<const char*, CorrelationMode>;
using RuleOpt = std::pair<const char*, AlphaRule>;
using AxisOpt = std::pair<const char*, LagAxis>;

inline const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = {
        KeySpec{"data_path", false, [](const RunConfig& c) { return c.data_path; },
                [](RunConfig& c, const std::string& v) { c.data_path = v; }},
        UMIXER_ENUM_KEY("data_kind", false, data_kind, DataKindOpt{"long_csv", DataKind::long_csv}, DataKindOpt{"m4", DataKind::m4}),
        KeySpec{"split", false,
                [](const RunConfig& c) {
                    return format_double(c.split.train) + ":" + format_double(c.split.val) + ":" + format_double(c.split.test);
                },
                [](RunConfig& c, const std::string& v) { c.split = parse_split_ratios(v); }},
        UMIXER_ENUM_KEY("scale", false, scale, ScaleOpt{"train_zscore", ScaleMode::train_zscore}, ScaleOpt{"none", ScaleMode::none}),
        UMIXER_SIZE_KEY("window_stride", false, window_stride),
        UMIXER_SIZE_KEY("seasonality", false, seasonality),

        UMIXER_SIZE_KEY("input_length", true, model.L),
        UMIXER_SIZE_KEY("horizon", false, model.H),
        UMIXER_SIZE_KEY("patch_length", true, model.P),
        UMIXER_SIZE_KEY("patch_stride", true, model.S),
        UMIXER_SIZE_KEY("d_model", true, model.D),
        UMIXER_SIZE_KEY("levels", true, model.M),
        UMIXER_SIZE_KEY("channels", true, model.C),
        UMIXER_REAL_KEY("dropout", true, model.dropout),
        UMIXER_SIZE_KEY("temporal_hidden", true, model.temporal_hidden),
        UMIXER_SIZE_KEY("channel_hidden", true, model.channel_hidden),
        UMIXER_BOOL_KEY("share_temporal_mlp", true, model.share_temporal_mlp),
        UMIXER_ENUM_KEY("skip_mode", true, model.skip_mode, SkipOpt{"concat_project", SkipMode::concat_project},
                        SkipOpt{"residual_add", SkipMode::residual_add}),
        UMIXER_ENUM_KEY("decoder_skip", true, model.decoder_skip, DecOpt{"encoder_output", DecoderSkip::encoder_output},
                        DecOpt{"literal", DecoderSkip::literal}),
        UMIXER_BOOL_KEY("sc_enabled", true, model.sc_enabled),
        UMIXER_ENUM_KEY("sc_mode", true, model.correction.mode, CorrOpt{"normalized", CorrelationMode::normalized},
                        CorrOpt{"covariance", CorrelationMode::covariance}),
        UMIXER_BOOL_KEY("sc_centered", true, model.correction.centered),
        UMIXER_REAL_KEY("sc_eps", true, model.correction.eps),
        UMIXER_ENUM_KEY("sc_alpha_rule", true, model.correction.alpha_rule, RuleOpt{"literal", AlphaRule::literal},
                        RuleOpt{"least_squares", AlphaRule::least_squares}),
        UMIXER_ENUM_KEY("sc_lag_axis", true, model.correction.lag_axis, AxisOpt{"token", LagAxis::token},
                        AxisOpt{"feature", LagAxis::feature}),
        UMIXER_BOOL_KEY("sc_use_fft", true, model.correction.use_fft),

        UMIXER_SIZE_KEY("epochs", false, train.epochs),
        UMIXER_SIZE_KEY("batch_size", false, train.batch_size),
        UMIXER_REAL_KEY("lr", false, train.lr),
        KeySpec{"seed", false, [](const RunConfig& c) { return std::to_string(c.train.seed); },
                [](RunConfig& c, const std::string& v) { c.train.seed = parse_unsigned<std::uint64_t>("seed", v); }},
        UMIXER_SIZE_KEY("patience", false, train.patience),
        UMIXER_REAL_KEY("clip_norm", false, train.clip_norm),
        UMIXER_REAL_KEY("target_train_l1", false, train.target_train_l1),

        KeySpec{"horizons", false, [](const RunConfig& c) { return format_list(c.horizons); },
                [](RunConfig& c, const std::string& v) { c.horizons = parse_list<std::size_t>("horizons", v); }},
        KeySpec{"seeds", false, [](const RunConfig& c) { return format_list(c.seeds); },
                [](RunConfig& c, const std::string& v) { c.seeds = parse_list<std::uint64_t>("seeds", v); }},
        KeySpec{"sweep_levels", false, [](const RunConfig& c) { return format_list(c.sweep_levels); },
                [](RunConfig& c, const std::string& v) { c.sweep_levels = parse_list<std::size_t>("sweep_levels", v); }},
        KeySpec{"sweep_patch_lengths", false, [](const RunConfig& c) { return format_list(c.sweep_patch_lengths); },
                [](RunConfig& c, const std::string& v) {
                    c.sweep_patch_lengths = parse_list<std::size_t>("sweep_patch_lengths", v);
                }},
        KeySpec{"output_dir", false, [](const RunConfig& c) { return c.output_dir; },
                [](RunConfig& c, const std::string& v) { c.output_dir = v; }},
    };
    return specs;
}

#undef UMIXER_SIZE_KEY
#undef UMIXER_REAL_KEY
#undef UMIXER_BOOL_KEY
#undef UMIXER_ENUM_KEY

}  // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& k : detail::key_specs()) out.push_back(k.name);
    return out;
}

// Applies key=value pairs; all unknown keys are reported together.
inline void apply_settings(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& settings) {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : settings) {
        bool found = false;
        for (const auto& spec : detail::key_specs()) {
            if (spec.name == key) {
                spec.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config key(s):";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }
}

inline std::pair<std::string, std::string> parse_setting(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
    return {std::string(detail::trim(text.substr(0, eq))), std::string(detail::trim(text.substr(eq + 1)))};
}

// Flat text format: one "key = value" per line, '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::istream& in) {
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (detail::trim(line).empty()) continue;
        out.push_back(parse_setting(line));
    }
    return out;
}

inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    apply_settings(cfg, parse_config_text(in));
}

inline std::string config_to_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& spec : detail::key_specs()) out += spec.name + " = " + spec.get(cfg) + "\n";
    return out;
}

inline RunConfig config_from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    apply_settings(cfg, parse_config_text(in));
    return cfg;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

// Hash of the architecture keys (horizon excluded: it comes from each
// checkpoint when evaluating several horizons).
inline std::string model_fingerprint(const RunConfig& cfg) {
    std::string canon;
    for (const auto& spec : detail::key_specs()) {
        if (spec.architecture) canon += spec.name + "=" + spec.get(cfg) + ";";
    }
    return hex64(fnv1a64(canon));
}

inline std::string model_fingerprint(const ModelConfig& model) {
    RunConfig cfg;
    cfg.model = model;
    return model_fingerprint(cfg);
}

}  // namespace umixer

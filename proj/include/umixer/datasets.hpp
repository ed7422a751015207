#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "evaluate.hpp"
#include "synthetic.hpp"

namespace umixer {

// Built-in generated datasets, addressed as data_path = "synthetic:<name>".
inline const std::vector<std::string>& synthetic_dataset_names() {
    static const std::vector<std::string> names{"sinusoid", "sinusoid_noisy", "level_shift"};
    return names;
}

inline bool is_synthetic_path(const std::string& path) { return path.rfind("synthetic:", 0) == 0; }

inline RawSeries synthetic_dataset(const std::string& name) {
    if (name == "sinusoid") return sinusoid_trend();
    if (name == "sinusoid_noisy") return sinusoid_trend({.noise = 0.1});
    if (name == "level_shift") return level_shift_series();
    std::string known;
    for (const auto& n : synthetic_dataset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown synthetic dataset '" + name + "' (known: " + known + ")");
}

inline std::string dataset_id(const std::string& path) {
    if (is_synthetic_path(path)) return path;
    return std::filesystem::path(path).stem().string();
}

inline RawSeries load_long_series(const std::string& path) {
    if (path.empty()) throw ConfigError("data_path is not set");
    if (is_synthetic_path(path)) return synthetic_dataset(path.substr(10));
    return load_csv(path);
}

inline PreparedData prepare_long_term(const RunConfig& cfg) {
    return prepare_long_term(load_long_series(cfg.data_path), cfg, dataset_id(cfg.data_path));
}

inline std::vector<M4Series> load_short_series(const std::string& path) {
    if (path.empty()) throw ConfigError("data_path is not set");
    return load_m4(path);
}

}  // namespace umixer

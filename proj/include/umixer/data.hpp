#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"

namespace umixer {

// Multivariate series, channel-major: values is C x T.
struct RawSeries {
    std::vector<std::string> channel_names;
    Matrix values;
    std::vector<std::string> timestamps;

    std::size_t channels() const { return values.rows; }
    std::size_t length() const { return values.cols; }
};

struct M4Series {
    std::string id;
    std::vector<double> values;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

inline bool parse_double(std::string_view text, double& out) {
    if (text.empty()) return false;
    if (text.front() == '+') text.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

}  // namespace detail

// Header row, first column an opaque timestamp, remaining columns numeric.
inline RawSeries parse_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw DataError(source + ": empty file, expected a header row");
    const auto header = detail::split_fields(line);
    if (header.size() < 2) throw DataError(source + ": header needs a timestamp column and at least one channel");

    RawSeries series;
    for (std::size_t i = 1; i < header.size(); ++i) series.channel_names.emplace_back(header[i]);
    const std::size_t channels = series.channel_names.size();
    std::vector<double> row_major;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        ++row;
        const auto fields = detail::split_fields(line);
        if (fields.size() != channels + 1) {
            throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(channels + 1));
        }
        series.timestamps.emplace_back(fields[0]);
        for (std::size_t c = 0; c < channels; ++c) {
            double v = 0.0;
            if (!detail::parse_double(fields[c + 1], v)) {
                throw DataError(source + ": row " + std::to_string(row) + ", column '" + series.channel_names[c] +
                                "': non-numeric or missing value '" + std::string(fields[c + 1]) + "'");
            }
            row_major.push_back(v);
        }
    }
    if (row == 0) throw DataError(source + ": no data rows");

    series.values = Matrix(channels, row);
    for (std::size_t t = 0; t < row; ++t)
        for (std::size_t c = 0; c < channels; ++c) series.values(c, t) = row_major[t * channels + c];
    return series;
}

inline RawSeries load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path.string() + "'");
    return parse_csv(in, path.string());
}

inline void write_csv(std::ostream& out, const RawSeries& series) {
    out << "date";
    for (const auto& name : series.channel_names) out << ',' << name;
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < series.length(); ++t) {
        out << (t < series.timestamps.size() ? series.timestamps[t] : std::to_string(t));
        for (std::size_t c = 0; c < series.channels(); ++c) {
            auto res = std::to_chars(buf, buf + sizeof(buf), series.values(c, t));
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
}

// One series per line: id followed by its values. A first line whose values
// do not parse is treated as a header.
inline std::vector<M4Series> parse_m4(std::istream& in, const std::string& source = "<stream>") {
    std::vector<M4Series> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_fields(line);
        M4Series s{std::string(fields[0]), {}};
        bool ok = true;
        for (std::size_t i = 1; i < fields.size(); ++i) {
            if (fields[i].empty()) continue;
            double v = 0.0;
            if (!detail::parse_double(fields[i], v)) {
                ok = false;
                break;
            }
            s.values.push_back(v);
        }
        if (!ok) {
            if (line_no == 1) continue;
            throw DataError(source + ": line " + std::to_string(line_no) + ": non-numeric value in series '" + s.id + "'");
        }
        if (s.values.empty()) throw DataError(source + ": line " + std::to_string(line_no) + ": series has no values");
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError(source + ": no series");
    return out;
}

inline std::vector<M4Series> load_m4(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path.string() + "'");
    return parse_m4(in, path.string());
}

struct SplitRatios {
    double train = 6.0;
    double val = 2.0;
    double test = 2.0;
};

struct SplitSeries {
    RawSeries train;
    RawSeries val;
    RawSeries test;
};

// Columns [begin, end) of a series.
inline RawSeries slice_time(const RawSeries& s, std::size_t begin, std::size_t end) {
    RawSeries out;
    out.channel_names = s.channel_names;
    out.values = Matrix(s.channels(), end - begin);
    for (std::size_t c = 0; c < s.channels(); ++c)
        for (std::size_t t = begin; t < end; ++t) out.values(c, t - begin) = s.values(c, t);
    if (s.timestamps.size() == s.length()) {
        out.timestamps.assign(s.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                              s.timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

// Contiguous train/val/test segments with boundaries floor(cumulative fraction * T).
inline SplitSeries chronological_split(const RawSeries& s, const SplitRatios& ratios) {
    const double total = ratios.train + ratios.val + ratios.test;
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || !(total > 0)) {
        throw ConfigError("chronological_split: ratios must be nonnegative with a positive sum");
    }
    const std::size_t T = s.length();
    if (T < 3) throw ConfigError("chronological_split: need at least 3 time steps, have " + std::to_string(T));
    const auto boundary = [&](double cumulative) {
        return static_cast<std::size_t>(std::floor(cumulative * static_cast<double>(T) / total));
    };
    const std::size_t b1 = boundary(ratios.train);
    const std::size_t b2 = boundary(ratios.train + ratios.val);
    if (b1 == 0 || b2 == b1 || b2 >= T) {
        throw ConfigError("chronological_split: a segment is empty for T=" + std::to_string(T) + " (boundaries " +
                          std::to_string(b1) + ", " + std::to_string(b2) + ")");
    }
    return {slice_time(s, 0, b1), slice_time(s, b1, b2), slice_time(s, b2, T)};
}

// Parses "6:2:2".
inline SplitRatios parse_split_ratios(const std::string& text) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
        double v = 0.0;
        if (!detail::parse_double(detail::trim(item), v)) throw ConfigError("invalid split ratios '" + text + "'");
        parts.push_back(v);
    }
    if (parts.size() != 3) throw ConfigError("split ratios need three parts, got '" + text + "'");
    return {parts[0], parts[1], parts[2]};
}

// Input block X (C x L) followed immediately by target block Y (C x H).
struct WindowSample {
    Matrix x;
    Matrix y;
};

inline std::size_t window_count(std::size_t T, std::size_t L, std::size_t H, std::size_t stride) {
    return T < L + H ? 0 : (T - L - H) / stride + 1;
}

inline std::vector<WindowSample> make_windows(const RawSeries& s, std::size_t L, std::size_t H, std::size_t stride = 1) {
    if (L == 0 || H == 0 || stride == 0) throw ConfigError("make_windows: L, H and stride must be positive");
    const std::size_t T = s.length();
    if (T < L + H) {
        throw DataError("make_windows: series has " + std::to_string(T) + " steps, at least L+H=" +
                        std::to_string(L + H) + " required");
    }
    const std::size_t C = s.channels();
    std::vector<WindowSample> out;
    out.reserve(window_count(T, L, H, stride));
    for (std::size_t start = 0; start + L + H <= T; start += stride) {
        WindowSample w{Matrix(C, L), Matrix(C, H)};
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t t = 0; t < L; ++t) w.x(c, t) = s.values(c, start + t);
            for (std::size_t t = 0; t < H; ++t) w.y(c, t) = s.values(c, start + L + t);
        }
        out.push_back(std::move(w));
    }
    return out;
}

inline constexpr double kSigmaFloor = 1e-8;

struct NormStats {
    std::vector<double> mu;
    std::vector<double> sigma;
};

// Per-channel standardization of one window with population statistics.
inline std::pair<Matrix, NormStats> normalize_instance(const Matrix& x) {
    if (x.cols == 0) throw DataError("normalize_instance: empty window");
    NormStats stats{std::vector<double>(x.rows), std::vector<double>(x.rows)};
    Matrix xn(x.rows, x.cols);
    const double n = static_cast<double>(x.cols);
    for (std::size_t c = 0; c < x.rows; ++c) {
        double mean = 0.0;
        for (double v : x.row(c)) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : x.row(c)) var += (v - mean) * (v - mean);
        var /= n;
        const double sigma = std::max(std::sqrt(var), kSigmaFloor);
        stats.mu[c] = mean;
        stats.sigma[c] = sigma;
        for (std::size_t t = 0; t < x.cols; ++t) xn(c, t) = (x(c, t) - mean) / sigma;
    }
    return {std::move(xn), std::move(stats)};
}

inline Matrix denormalize_instance(const Matrix& xn, const NormStats& stats) {
    Matrix x(xn.rows, xn.cols);
    for (std::size_t c = 0; c < xn.rows; ++c)
        for (std::size_t t = 0; t < xn.cols; ++t) x(c, t) = xn(c, t) * stats.sigma[c] + stats.mu[c];
    return x;
}

// floor((L - P) / S) + 2
inline std::size_t patch_count(std::size_t L, std::size_t P, std::size_t S) {
    if (P == 0 || S == 0 || P > L) {
        throw ConfigError("patch_count: need 1 <= P <= L and S >= 1 (L=" + std::to_string(L) +
                          ", P=" + std::to_string(P) + ", S=" + std::to_string(S) + ")");
    }
    return (L - P) / S + 2;
}

// (C*N) x P patches, row c*N + n holds channel c's patch starting at n*S of
// the input padded with S copies of its final value.
struct PatchSet {
    Matrix patches;
    std::size_t num_patches = 0;
    std::size_t channels = 0;
};

inline PatchSet patchify(const Matrix& xn, std::size_t P, std::size_t S) {
    const std::size_t L = xn.cols;
    const std::size_t N = patch_count(L, P, S);
    const std::size_t C = xn.rows;
    PatchSet out{Matrix(C * N, P), N, C};
    std::vector<double> padded(L + S);
    for (std::size_t c = 0; c < C; ++c) {
        std::copy_n(xn.row(c).begin(), L, padded.begin());
        std::fill(padded.begin() + static_cast<std::ptrdiff_t>(L), padded.end(), xn(c, L - 1));
        for (std::size_t n = 0; n < N; ++n) std::copy_n(padded.begin() + static_cast<std::ptrdiff_t>(n * S), P, out.patches.row(c * N + n).begin());
    }
    return out;
}

// Dataset-level per-channel z-scoring fitted on the training segment.
struct ChannelScaler {
    std::vector<double> mean;
    std::vector<double> std;

    bool empty() const { return mean.empty(); }

    static ChannelScaler identity(std::size_t channels) {
        return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
    }

    static ChannelScaler fit(const RawSeries& s) {
        ChannelScaler sc{std::vector<double>(s.channels()), std::vector<double>(s.channels())};
        for (std::size_t c = 0; c < s.channels(); ++c) {
            const auto row = s.values.row(c);
            double mean = 0.0;
            for (double v : row) mean += v;
            mean /= static_cast<double>(row.size());
            double var = 0.0;
            for (double v : row) var += (v - mean) * (v - mean);
            var /= static_cast<double>(row.size());
            sc.mean[c] = mean;
            sc.std[c] = std::max(std::sqrt(var), kSigmaFloor);
        }
        return sc;
    }

    RawSeries transform(const RawSeries& s) const {
        check(s.channels());
        RawSeries out = s;
        for (std::size_t c = 0; c < s.channels(); ++c)
            for (auto& v : out.values.row(c)) v = (v - mean[c]) / std[c];
        return out;
    }

    Matrix inverse(const Matrix& m) const {
        check(m.rows);
        Matrix out = m;
        for (std::size_t c = 0; c < m.rows; ++c)
            for (auto& v : out.row(c)) v = v * std[c] + mean[c];
        return out;
    }

private:
    void check(std::size_t channels) const {
        if (channels != mean.size()) {
            throw DataError("scaler fitted on " + std::to_string(mean.size()) + " channels applied to " +
                            std::to_string(channels));
        }
    }
};

}  // namespace umixer

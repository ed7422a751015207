#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace umixer {

namespace detail {

inline void require_equal_length(const char* op, std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(op) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    if (a.empty()) throw DimensionError(std::string(op) + ": empty input");
}

}  // namespace detail

inline double mse(std::span<const double> y, std::span<const double> y_hat) {
    detail::require_equal_length("mse", y, y_hat);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) total += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    return total / static_cast<double>(y.size());
}

inline double mae(std::span<const double> y, std::span<const double> y_hat) {
    detail::require_equal_length("mae", y, y_hat);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) total += std::abs(y[i] - y_hat[i]);
    return total / static_cast<double>(y.size());
}

// Percentage in [0, 200]; 0/0 terms count as zero.
inline double smape(std::span<const double> y, std::span<const double> y_hat) {
    detail::require_equal_length("smape", y, y_hat);
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double denom = std::abs(y[i]) + std::abs(y_hat[i]);
        if (denom > 0.0) total += std::abs(y[i] - y_hat[i]) / denom;
    }
    return 200.0 * total / static_cast<double>(y.size());
}

// Seasonal-naive in-sample MAE at lag m.
inline double seasonal_naive_scale(std::span<const double> insample, std::size_t m) {
    if (m == 0 || insample.size() <= m) {
        throw DataError("mase: in-sample length " + std::to_string(insample.size()) + " must exceed m=" + std::to_string(m));
    }
    double total = 0.0;
    for (std::size_t t = m; t < insample.size(); ++t) total += std::abs(insample[t] - insample[t - m]);
    return total / static_cast<double>(insample.size() - m);
}

inline double mase(std::span<const double> y, std::span<const double> y_hat, std::span<const double> insample, std::size_t m) {
    detail::require_equal_length("mase", y, y_hat);
    const double scale = seasonal_naive_scale(insample, m);
    if (!(scale > 0.0)) throw DataError("mase: undefined, seasonal-naive in-sample error is zero");
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) total += std::abs(y[i] - y_hat[i]);
    return total / static_cast<double>(y.size()) / scale;
}

inline double owa(double smape_value, double mase_value, double smape_naive2, double mase_naive2) {
    if (!(smape_naive2 > 0.0) || !(mase_naive2 > 0.0)) throw DataError("owa: Naive2 reference metrics must be positive");
    return 0.5 * (smape_value / smape_naive2 + mase_value / mase_naive2);
}

// Sample autocorrelation at lag k.
inline double sample_acf(std::span<const double> x, std::size_t k) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
        den += (x[t] - mean) * (x[t] - mean);
        if (t >= k) num += (x[t] - mean) * (x[t - k] - mean);
    }
    return den > 0.0 ? num / den : 0.0;
}

// 90% two-sided test on the lag-m autocorrelation with Bartlett's variance.
inline bool seasonality_test(std::span<const double> x, std::size_t m) {
    if (m <= 1 || x.size() <= m) return false;
    double s = 0.0;
    for (std::size_t i = 1; i < m; ++i) s += sample_acf(x, i) * sample_acf(x, i);
    const double limit = 1.645 * std::sqrt((1.0 + 2.0 * s) / static_cast<double>(x.size()));
    return std::abs(sample_acf(x, m)) > limit;
}

// Multiplicative seasonal indices by classical decomposition (centered moving
// average of order m, 2 x m when m is even), normalized to mean 1. Index
// position p corresponds to time steps t with t % m == p.
inline std::vector<double> seasonal_indices(std::span<const double> x, std::size_t m) {
    const std::size_t n = x.size();
    std::vector<double> ratio_sum(m, 0.0);
    std::vector<std::size_t> ratio_count(m, 0);
    const std::size_t half = m / 2;
    for (std::size_t t = half; t + half < n; ++t) {
        double trend = 0.0;
        if (m % 2 == 1) {
            for (std::size_t j = t - half; j <= t + half; ++j) trend += x[j];
            trend /= static_cast<double>(m);
        } else {
            trend = 0.5 * x[t - half] + 0.5 * x[t + half];
            for (std::size_t j = t - half + 1; j < t + half; ++j) trend += x[j];
            trend /= static_cast<double>(m);
        }
        if (trend == 0.0) continue;
        ratio_sum[t % m] += x[t] / trend;
        ratio_count[t % m] += 1;
    }
    std::vector<double> idx(m, 1.0);
    double mean = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
        idx[p] = ratio_count[p] ? ratio_sum[p] / static_cast<double>(ratio_count[p]) : 1.0;
        mean += idx[p];
    }
    mean /= static_cast<double>(m);
    for (auto& v : idx) v /= mean;
    return idx;
}

struct Naive2Result {
    std::vector<double> forecast;
    bool seasonal = false;
    std::vector<std::string> warnings;
};

// Seasonally adjusted last-value forecast: deseasonalize when the lag-m
// autocorrelation is significant, carry the last value forward, reseasonalize.
inline Naive2Result naive2_forecast(std::span<const double> insample, std::size_t m, std::size_t horizon) {
    if (insample.empty()) throw DataError("naive2: empty in-sample series");
    Naive2Result out;
    std::vector<double> idx;
    if (m > 1) {
        const bool positive = std::all_of(insample.begin(), insample.end(), [](double v) { return v > 0.0; });
        if (insample.size() < 2 * m) {
            out.warnings.push_back("naive2: fewer than 2m observations, using non-seasonal naive");
        } else if (positive && seasonality_test(insample, m)) {
            idx = seasonal_indices(insample, m);
            out.seasonal = true;
        }
    }
    const std::size_t n = insample.size();
    const double last = out.seasonal ? insample[n - 1] / idx[(n - 1) % m] : insample[n - 1];
    out.forecast.resize(horizon);
    for (std::size_t h = 0; h < horizon; ++h) out.forecast[h] = out.seasonal ? last * idx[(n + h) % m] : last;
    return out;
}

}  // namespace umixer

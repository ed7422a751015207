#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace umixer {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct GradEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

struct GradReport {
    std::vector<GradEntry> entries;
    double tolerance = 0.0;
    bool passed = true;

    double max_rel_error() const {
        double worst = 0.0;
        for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
        return worst;
    }
};

inline constexpr double kGradCheckStep = 1e-4;

// |analytic - numeric| / max(1, |analytic|, |numeric|)
inline double grad_rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// Compares supplied analytic gradients against central differences of
// `forward`, which must rebuild the scalar loss from the current values of
// `params` and be deterministic.
inline GradReport grad_check_against(const std::function<Tensor()>& forward, NamedTensors& params,
                                     const std::vector<std::vector<double>>& analytic, double tol,
                                     double step = kGradCheckStep) {
    GradReport report;
    report.tolerance = tol;
    NoGradGuard no_grad;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& [name, tensor] = params[p];
        GradEntry entry{name, 0.0, 0};
        auto values = tensor.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = forward().item();
            values[i] = saved - step;
            const double down = forward().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = grad_rel_error(analytic[p][i], numeric);
            if (err > entry.max_rel_error || !std::isfinite(err)) {
                entry.max_rel_error = std::isfinite(err) ? err : INFINITY;
                entry.worst_index = i;
            }
        }
        if (!(entry.max_rel_error < tol)) report.passed = false;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

inline std::vector<std::vector<double>> analytic_gradients(const std::function<Tensor()>& forward,
                                                           const NamedTensors& params) {
    for (const auto& [name, t] : params) t.zero_grad();
    backward(forward());
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const auto& [name, t] : params) grads.emplace_back(t.grad().begin(), t.grad().end());
    return grads;
}

inline GradReport grad_check(const std::function<Tensor()>& forward, NamedTensors& params, double tol,
                             double step = kGradCheckStep) {
    const auto analytic = analytic_gradients(forward, params);
    return grad_check_against(forward, params, analytic, tol, step);
}

}  // namespace umixer

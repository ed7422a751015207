#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "correction.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace umixer {

// Smallest configuration that still exercises every component.
inline ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.C = 2;
    cfg.L = 8;
    cfg.H = 4;
    cfg.P = 4;
    cfg.S = 2;
    cfg.D = 4;
    cfg.M = 1;
    cfg.dropout = 0.0;
    return cfg;
}

enum class GradLoss {
    l1,                // mean absolute error against random targets
    weighted_squares,  // sum of squared, randomly weighted forecasts
};

// Finite-difference check of every parameter of the full model on a random
// batch. Correction statistics are frozen after the first pass.
inline GradReport model_grad_check(const ModelConfig& cfg, std::uint64_t seed = 0, double tol = 1e-4,
                                   GradLoss loss = GradLoss::l1, std::size_t batch = 2) {
    cfg.validate();
    RngStream rng(seed);
    auto params = init_params(cfg, rng);
    std::vector<Matrix> inputs;
    for (std::size_t b = 0; b < batch; ++b) {
        Matrix x(cfg.C, cfg.L);
        for (auto& v : x.data) v = rng.normal();
        inputs.push_back(std::move(x));
    }
    std::vector<const Matrix*> ptrs;
    for (const auto& x : inputs) ptrs.push_back(&x);
    std::vector<double> weights(batch * cfg.C * cfg.H);
    for (auto& w : weights) w = rng.uniform(-1.0, 1.0);
    const std::vector<double> zeros(weights.size(), 0.0);

    CorrectionCache cache;
    RngStream unused(0);
    auto forward = [&]() {
        auto fw = forward_batch(cfg, params, ptrs, unused, false, &cache);
        if (loss == GradLoss::l1) return mean_abs_error(fw.forecast, weights);
        return sum_squares(affine_constant(fw.forecast, weights, zeros));
    };
    auto named = params.named();
    return grad_check(forward, named, tol);
}

namespace detail {

inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

}  // namespace detail

struct SelftestCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

inline std::vector<SelftestCheck> run_selftest(std::uint64_t seed = 0) {
    std::vector<SelftestCheck> out;
    RngStream rng(seed);

    {
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 2 + rng.below(255);
            std::vector<double> x(n);
            for (auto& v : x) v = rng.normal();
            const auto a = autocovariance_fft(x);
            const auto b = autocovariance_direct(x);
            for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
        }
        out.push_back({"fft_vs_direct", worst <= 1e-8, "max abs diff " + detail::sci(worst)});
    }

    {
        const std::vector<double> y{0.0, 0.0}, yh{1.0, 3.0};
        const std::vector<double> one{10.0}, two{20.0};
        const std::vector<double> z{0.0, 1.0}, zh{0.0, 1.0};
        bool ok = mse(y, yh) == 5.0 && mae(y, yh) == 2.0;
        ok = ok && std::abs(smape(one, two) - 200.0 * 10.0 / 30.0) < 1e-9;
        ok = ok && smape(z, zh) == 0.0;
        const std::vector<double> ins{1.0, 3.0, 2.0, 5.0, 4.0};
        const std::vector<double> truth{6.0, 8.0}, naive{4.0, 4.0};
        const double s_n = smape(truth, naive), m_n = mase(truth, naive, ins, 1);
        ok = ok && std::abs(owa(s_n, m_n, s_n, m_n) - 1.0) < 1e-12;
        out.push_back({"metric_fixtures", ok, ok ? "ok" : "fixture mismatch"});
    }

    {
        const std::size_t C = 2, N = 5, D = 3;
        std::vector<double> z(C * N * D);
        for (auto& v : z) v = rng.normal();
        CorrectionConfig cc;
        std::vector<std::string> warnings;
        const auto state = record_correction_state(z, C, N, D, cc, &warnings);
        const auto plan = plan_correction(state, z, C, N, D, cc, &warnings);
        double worst = 0.0;
        for (double a : plan.alpha) worst = std::max(worst, std::abs(a - 1.0));
        const Tensor y({C, N, D}, z);
        const auto corrected = apply_correction(y, plan.alpha, state.mu_x, state.mu_x, cc.centered, cc.lag_axis);
        for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(corrected.data()[i] - z[i]));
        out.push_back({"correction_identity", worst <= 1e-10, "max deviation " + detail::sci(worst)});
    }

    {
        const auto report = model_grad_check(tiny_model_config(), seed);
        out.push_back({"grad_check", report.passed, "max rel error " + detail::sci(report.max_rel_error())});
    }
    return out;
}

}  // namespace umixer

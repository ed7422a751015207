#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "fft.hpp"
#include "matrix.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace umixer {

// normalized: R divided by the lag-0 autocovariance (correlation).
// covariance: raw autocovariances.
enum class CorrelationMode { normalized, covariance };

// literal: alpha_i^2 = sum_j Rx*Ry / sum_j Rx^2.
// least_squares: alpha_i^2 = sum_j Rx*Ry / sum_j Ry^2 (row-wise fit of Rx ~ alpha^2 Ry).
enum class AlphaRule { literal, least_squares };

// Axis along which lag sequences run: the patch-token axis (length N) or the
// embedding-feature axis (length D).
enum class LagAxis { token, feature };

struct CorrectionConfig {
    CorrelationMode mode = CorrelationMode::normalized;
    bool centered = true;
    double eps = 1e-8;
    double fallback_alpha = 1.0;
    AlphaRule alpha_rule = AlphaRule::literal;
    LagAxis lag_axis = LagAxis::token;
    bool use_fft = true;
};

// Zero-meaned lag sequences of one (C, N, D) block together with the
// cross-sequence mean at every position.
struct SequenceStats {
    std::vector<double> mu;
    std::vector<double> variance;
    std::vector<std::vector<double>> sequences;
};

// z holds a (C, N, D) block in row-major order. With LagAxis::token each
// (c, d) pair contributes one length-N sequence; with LagAxis::feature each
// (c, n) pair contributes a length-D sequence.
inline SequenceStats token_sequence_stats(std::span<const double> z, std::size_t C, std::size_t N, std::size_t D,
                                          LagAxis axis = LagAxis::token) {
    if (z.size() != C * N * D) throw DimensionError("token_sequence_stats: block size does not match C*N*D");
    const std::size_t len = axis == LagAxis::token ? N : D;
    const std::size_t count = axis == LagAxis::token ? C * D : C * N;
    const auto at = [&](std::size_t seq, std::size_t pos) {
        if (axis == LagAxis::token) {
            const std::size_t c = seq / D, d = seq % D;
            return z[(c * N + pos) * D + d];
        }
        const std::size_t c = seq / N, n = seq % N;
        return z[(c * N + n) * D + pos];
    };

    SequenceStats out{std::vector<double>(len, 0.0), std::vector<double>(len, 0.0),
                      std::vector<std::vector<double>>(count, std::vector<double>(len))};
    for (std::size_t s = 0; s < count; ++s)
        for (std::size_t p = 0; p < len; ++p) out.mu[p] += at(s, p);
    for (auto& m : out.mu) m /= static_cast<double>(count);
    for (std::size_t s = 0; s < count; ++s)
        for (std::size_t p = 0; p < len; ++p) out.variance[p] += (at(s, p) - out.mu[p]) * (at(s, p) - out.mu[p]);
    for (auto& v : out.variance) v /= static_cast<double>(count);

    for (std::size_t s = 0; s < count; ++s) {
        auto& seq = out.sequences[s];
        double mean = 0.0;
        for (std::size_t p = 0; p < len; ++p) {
            seq[p] = at(s, p);
            mean += seq[p];
        }
        mean /= static_cast<double>(len);
        for (auto& v : seq) v -= mean;
    }
    return out;
}

// r[k] = sum_{t=0}^{N-1-k} seq[t] * seq[t+k]
inline std::vector<double> autocovariance_direct(std::span<const double> seq) {
    const std::size_t n = seq.size();
    std::vector<double> r(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t t = 0; t + k < n; ++t) r[k] += seq[t] * seq[t + k];
    return r;
}

// Wiener-Khinchin route: zero-pad to 2N so the circular correlation equals
// the linear one, then F^-1(|F(seq)|^2) truncated to N lags.
inline std::vector<double> autocovariance_fft(std::span<const double> seq) {
    const std::size_t n = seq.size();
    if (n == 0) return {};
    std::vector<double> padded(2 * n, 0.0);
    std::copy(seq.begin(), seq.end(), padded.begin());
    auto spectrum = fft(padded);
    for (auto& v : spectrum) v = Complex(std::norm(v), 0.0);
    auto full = ifft(spectrum);
    full.resize(n);
    return full;
}

// Mean autocovariance over many equal-length sequences. The FFT route sums
// power spectra first and inverts once (linearity of the inverse transform).
inline std::vector<double> mean_autocovariance(const std::vector<std::vector<double>>& sequences, bool use_fft) {
    if (sequences.empty()) return {};
    const std::size_t n = sequences.front().size();
    std::vector<double> r(n, 0.0);
    if (use_fft) {
        std::vector<Complex> power(2 * n, Complex(0.0, 0.0));
        std::vector<double> padded(2 * n, 0.0);
        for (const auto& seq : sequences) {
            std::copy(seq.begin(), seq.end(), padded.begin());
            const auto spectrum = fft(padded);
            for (std::size_t k = 0; k < power.size(); ++k) power[k] += std::norm(spectrum[k]);
        }
        auto full = ifft(power);
        for (std::size_t k = 0; k < n; ++k) r[k] = full[k];
    } else {
        for (const auto& seq : sequences) {
            const auto rk = autocovariance_direct(seq);
            for (std::size_t k = 0; k < n; ++k) r[k] += rk[k];
        }
    }
    for (auto& v : r) v /= static_cast<double>(sequences.size());
    return r;
}

// Toeplitz assembly R[i][j] = r[|i-j|], divided by r[0] in normalized mode.
inline Matrix autocorr_matrix(std::span<const double> r, CorrelationMode mode, double eps = 1e-8,
                              std::vector<std::string>* warnings = nullptr) {
    const std::size_t n = r.size();
    Matrix R(n, n);
    if (n == 0) return R;
    double denom = 1.0;
    if (mode == CorrelationMode::normalized) {
        if (!(r[0] > eps)) {
            if (warnings) warnings->push_back("autocorr_matrix: lag-0 autocovariance below eps, using identity");
            for (std::size_t i = 0; i < n; ++i) R(i, i) = 1.0;
            return R;
        }
        denom = r[0];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) R(i, j) = r[i > j ? i - j : j - i] / denom;
    return R;
}

inline std::vector<double> compute_alpha(const Matrix& Rx, const Matrix& Ry, double eps = 1e-8,
                                         std::vector<std::string>* warnings = nullptr,
                                         AlphaRule rule = AlphaRule::literal, double fallback = 1.0) {
    if (Rx.rows != Ry.rows || Rx.cols != Ry.cols) throw DimensionError("compute_alpha: matrix sizes differ");
    std::vector<double> alpha(Rx.rows, fallback);
    for (std::size_t i = 0; i < Rx.rows; ++i) {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t j = 0; j < Rx.cols; ++j) {
            num += Rx(i, j) * Ry(i, j);
            den += rule == AlphaRule::literal ? Rx(i, j) * Rx(i, j) : Ry(i, j) * Ry(i, j);
        }
        if (den < eps) {
            if (warnings) warnings->push_back("compute_alpha: degenerate denominator at row " + std::to_string(i));
            continue;
        }
        const double ratio = num / den;
        if (ratio < 0.0 || !std::isfinite(ratio)) {
            if (warnings) warnings->push_back("compute_alpha: negative ratio at row " + std::to_string(i));
            continue;
        }
        alpha[i] = std::sqrt(ratio);
    }
    return alpha;
}

// Statistics of the embedded input consumed by the correction.
struct CorrectionState {
    std::vector<double> mu_x;
    std::vector<double> sigma_x;
    Matrix R_x;
    CorrelationMode mode = CorrelationMode::normalized;
};

inline CorrectionState record_correction_state(std::span<const double> z, std::size_t C, std::size_t N, std::size_t D,
                                               const CorrectionConfig& cfg, std::vector<std::string>* warnings = nullptr) {
    auto stats = token_sequence_stats(z, C, N, D, cfg.lag_axis);
    const auto r = mean_autocovariance(stats.sequences, cfg.use_fft);
    return {std::move(stats.mu), std::move(stats.variance), autocorr_matrix(r, cfg.mode, cfg.eps, warnings), cfg.mode};
}

// Elementwise multiplier/offset realizing the correction on a (C, N, D)
// block: centered  -> alpha*(y - mu_y) + mu_x
//            literal -> alpha*y + (mu_x - mu_y)
struct CorrectionCoefficients {
    std::vector<double> mult;
    std::vector<double> shift;
};

inline CorrectionCoefficients correction_coefficients(std::span<const double> alpha, std::span<const double> mu_x,
                                                      std::span<const double> mu_y, bool centered, std::size_t C,
                                                      std::size_t N, std::size_t D, LagAxis axis = LagAxis::token) {
    const std::size_t len = axis == LagAxis::token ? N : D;
    if (alpha.size() != len || mu_x.size() != len || mu_y.size() != len) {
        throw DimensionError("correction_coefficients: alpha/mu length does not match the lag axis");
    }
    CorrectionCoefficients out{std::vector<double>(C * N * D), std::vector<double>(C * N * D)};
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t d = 0; d < D; ++d) {
                const std::size_t p = axis == LagAxis::token ? n : d;
                const std::size_t i = (c * N + n) * D + d;
                out.mult[i] = alpha[p];
                out.shift[i] = centered ? mu_x[p] - alpha[p] * mu_y[p] : mu_x[p] - mu_y[p];
            }
    return out;
}

// Applies the correction to a (C, N, D) tensor. alpha and the means are
// constants: no gradient flows into them.
inline Tensor apply_correction(const Tensor& y_d, std::span<const double> alpha, std::span<const double> mu_x,
                               std::span<const double> mu_y, bool centered, LagAxis axis = LagAxis::token) {
    if (y_d.rank() != 3) throw DimensionError("apply_correction: expected (C,N,D), got " + shape_str(y_d.shape()));
    auto coeff = correction_coefficients(alpha, mu_x, mu_y, centered, y_d.dim(0), y_d.dim(1), y_d.dim(2), axis);
    return affine_constant(y_d, std::move(coeff.mult), coeff.shift);
}

// Full correction of one block given the recorded input state: returns the
// coefficients plus the alpha and mean difference for diagnostics.
struct CorrectionOutcome {
    CorrectionCoefficients coefficients;
    std::vector<double> alpha;
    std::vector<double> mean_shift;  // mu_x - mu_y
};

inline CorrectionOutcome plan_correction(const CorrectionState& state, std::span<const double> y, std::size_t C,
                                         std::size_t N, std::size_t D, const CorrectionConfig& cfg,
                                         std::vector<std::string>* warnings = nullptr) {
    auto y_state = record_correction_state(y, C, N, D, cfg, warnings);
    auto alpha = compute_alpha(state.R_x, y_state.R_x, cfg.eps, warnings, cfg.alpha_rule, cfg.fallback_alpha);
    std::vector<double> shift(state.mu_x.size());
    for (std::size_t i = 0; i < shift.size(); ++i) shift[i] = state.mu_x[i] - y_state.mu_x[i];
    auto coeff = correction_coefficients(alpha, state.mu_x, y_state.mu_x, cfg.centered, C, N, D, cfg.lag_axis);
    return {std::move(coeff), std::move(alpha), std::move(shift)};
}

}  // namespace umixer

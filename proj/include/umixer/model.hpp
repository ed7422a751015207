#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "correction.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"
#include "matrix.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace umixer {

enum class SkipMode { concat_project, residual_add };

// How the level-i decoder's skip summand is formed:
//   encoder_output: W_y(dec_i(Y_out,i+1) + dec_i(X_out,i))
//   literal:        W_y(dec_i(Y_out,i+1) + dec_i(Y_in,i)) with Y_in,i = Y_out,i+1
enum class DecoderSkip { encoder_output, literal };

struct ModelConfig {
    std::size_t L = 96;  // input length
    std::size_t H = 96;  // horizon
    std::size_t P = 16;  // patch length
    std::size_t S = 8;   // patch stride
    std::size_t D = 128; // embedding width
    std::size_t M = 3;   // Unet levels
    std::size_t C = 7;   // channels
    double dropout = 0.1;
    std::size_t temporal_hidden = 0;  // 0 -> 2N
    std::size_t channel_hidden = 0;   // 0 -> 2D
    bool share_temporal_mlp = false;
    SkipMode skip_mode = SkipMode::concat_project;
    DecoderSkip decoder_skip = DecoderSkip::encoder_output;
    bool sc_enabled = true;
    CorrectionConfig correction;

    std::size_t N() const { return patch_count(L, P, S); }
    std::size_t temporal_width() const { return temporal_hidden ? temporal_hidden : 2 * N(); }
    std::size_t channel_width() const { return channel_hidden ? channel_hidden : 2 * D; }

    void validate() const {
        if (L == 0 || H == 0 || P == 0 || S == 0 || D == 0 || C == 0) {
            throw ConfigError("model config: L, H, P, S, D and C must be positive");
        }
        if (P > L) throw ConfigError("model config: patch length P=" + std::to_string(P) + " exceeds L=" + std::to_string(L));
        if (!(dropout >= 0.0) || dropout >= 1.0) throw ConfigError("model config: dropout must lie in [0, 1)");
        if (!(correction.eps > 0.0)) throw ConfigError("model config: sc_eps must be positive");
    }
};

struct MlpBlockParams {
    // temporal mixing, per channel (or shared): N -> hidden -> N
    Tensor t_w1, t_b1, t_w2, t_b2;
    Tensor ln1_gamma, ln1_beta;
    Tensor skip1_w, skip1_b;  // 2D -> D, concat_project only
    // feature mixing: D -> hidden -> D
    Tensor c_w1, c_b1, c_w2, c_b2;
    Tensor ln2_gamma, ln2_beta;
    Tensor skip2_w, skip2_b;

    void append_named(const std::string& prefix, NamedTensors& out) const {
        const std::pair<const char*, const Tensor*> fields[] = {
            {"t_w1", &t_w1}, {"t_b1", &t_b1}, {"t_w2", &t_w2}, {"t_b2", &t_b2},
            {"ln1_gamma", &ln1_gamma}, {"ln1_beta", &ln1_beta}, {"skip1_w", &skip1_w}, {"skip1_b", &skip1_b},
            {"c_w1", &c_w1}, {"c_b1", &c_b1}, {"c_w2", &c_w2}, {"c_b2", &c_b2},
            {"ln2_gamma", &ln2_gamma}, {"ln2_beta", &ln2_beta}, {"skip2_w", &skip2_w}, {"skip2_b", &skip2_b},
        };
        for (const auto& [name, t] : fields) {
            if (t->defined()) out.emplace_back(prefix + name, *t);
        }
    }
};

struct ModelParams {
    Tensor w_val;  // P x D
    Tensor w_pos;  // (C*N) x D
    std::vector<MlpBlockParams> encoders;
    std::vector<MlpBlockParams> decoders;
    std::vector<Tensor> merge_w;  // level i < M: D x D
    std::vector<Tensor> merge_b;
    Tensor head_w;  // (N*D) x (L+H)
    Tensor head_b;

    // Every learnable tensor under a stable name, in a fixed order.
    NamedTensors named() const {
        NamedTensors out{{"w_val", w_val}, {"w_pos", w_pos}};
        for (std::size_t i = 0; i < encoders.size(); ++i) encoders[i].append_named("enc" + std::to_string(i + 1) + ".", out);
        for (std::size_t i = 0; i < decoders.size(); ++i) decoders[i].append_named("dec" + std::to_string(i + 1) + ".", out);
        for (std::size_t i = 0; i < merge_w.size(); ++i) {
            out.emplace_back("merge" + std::to_string(i + 1) + ".w", merge_w[i]);
            out.emplace_back("merge" + std::to_string(i + 1) + ".b", merge_b[i]);
        }
        out.emplace_back("head.w", head_w);
        out.emplace_back("head.b", head_b);
        return out;
    }

    // Deep copy (fresh leaves holding the same values).
    ModelParams clone() const {
        ModelParams copy = *this;
        const auto src = named();
        auto dst_slots = copy.slots();
        for (std::size_t i = 0; i < src.size(); ++i) {
            *dst_slots[i] = Tensor(src[i].second.shape(), std::vector<double>(src[i].second.data().begin(), src[i].second.data().end()), true);
        }
        return copy;
    }

    void assign_values(const ModelParams& other) {
        auto dst = named();
        const auto src = other.named();
        if (dst.size() != src.size()) throw DimensionError("assign_values: parameter sets differ");
        for (std::size_t i = 0; i < dst.size(); ++i) {
            auto values = dst[i].second.mutable_data();
            const auto from = src[i].second.data();
            if (values.size() != from.size()) throw DimensionError("assign_values: size mismatch for " + dst[i].first);
            std::copy(from.begin(), from.end(), values.begin());
        }
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named()) n += t.numel();
        return n;
    }

private:
    std::vector<Tensor*> slots() {
        std::vector<Tensor*> out{&w_val, &w_pos};
        auto block = [&](MlpBlockParams& b) {
            for (Tensor* t : {&b.t_w1, &b.t_b1, &b.t_w2, &b.t_b2, &b.ln1_gamma, &b.ln1_beta, &b.skip1_w, &b.skip1_b,
                              &b.c_w1, &b.c_b1, &b.c_w2, &b.c_b2, &b.ln2_gamma, &b.ln2_beta, &b.skip2_w, &b.skip2_b}) {
                if (t->defined()) out.push_back(t);
            }
        };
        for (auto& b : encoders) block(b);
        for (auto& b : decoders) block(b);
        for (std::size_t i = 0; i < merge_w.size(); ++i) {
            out.push_back(&merge_w[i]);
            out.push_back(&merge_b[i]);
        }
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }
};

namespace detail {

inline Tensor uniform_param(Shape shape, std::size_t fan_in, RngStream& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v), true);
}

inline MlpBlockParams init_block(const ModelConfig& cfg, RngStream& rng) {
    const std::size_t N = cfg.N(), D = cfg.D;
    const std::size_t G = cfg.share_temporal_mlp ? 1 : cfg.C;
    const std::size_t th = cfg.temporal_width(), ch = cfg.channel_width();
    MlpBlockParams b;
    b.t_w1 = uniform_param({G, N, th}, N, rng);
    b.t_b1 = uniform_param({G, th}, N, rng);
    b.t_w2 = uniform_param({G, th, N}, th, rng);
    b.t_b2 = uniform_param({G, N}, th, rng);
    b.ln1_gamma = Tensor::full({D}, 1.0, true);
    b.ln1_beta = Tensor::zeros({D}, true);
    if (cfg.skip_mode == SkipMode::concat_project) {
        b.skip1_w = uniform_param({2 * D, D}, 2 * D, rng);
        b.skip1_b = uniform_param({D}, 2 * D, rng);
    }
    b.c_w1 = uniform_param({D, ch}, D, rng);
    b.c_b1 = uniform_param({ch}, D, rng);
    b.c_w2 = uniform_param({ch, D}, ch, rng);
    b.c_b2 = uniform_param({D}, ch, rng);
    b.ln2_gamma = Tensor::full({D}, 1.0, true);
    b.ln2_beta = Tensor::zeros({D}, true);
    if (cfg.skip_mode == SkipMode::concat_project) {
        b.skip2_w = uniform_param({2 * D, D}, 2 * D, rng);
        b.skip2_b = uniform_param({D}, 2 * D, rng);
    }
    return b;
}

}  // namespace detail

// Linears: U(-sqrt(1/fan_in), sqrt(1/fan_in)); positional table N(0, 0.02^2);
// layer norms start at gamma=1, beta=0.
inline ModelParams init_params(const ModelConfig& cfg, RngStream& rng) {
    cfg.validate();
    const std::size_t N = cfg.N(), D = cfg.D;
    ModelParams p;
    p.w_val = detail::uniform_param({cfg.P, D}, cfg.P, rng);
    std::vector<double> pos(cfg.C * N * D);
    for (auto& v : pos) v = 0.02 * rng.normal();
    p.w_pos = Tensor({cfg.C * N, D}, std::move(pos), true);
    for (std::size_t i = 0; i < cfg.M; ++i) p.encoders.push_back(detail::init_block(cfg, rng));
    for (std::size_t i = 0; i < cfg.M; ++i) p.decoders.push_back(detail::init_block(cfg, rng));
    for (std::size_t i = 0; i + 1 < cfg.M; ++i) {
        p.merge_w.push_back(detail::uniform_param({D, D}, D, rng));
        p.merge_b.push_back(detail::uniform_param({D}, D, rng));
    }
    p.head_w = detail::uniform_param({N * D, cfg.L + cfg.H}, N * D, rng);
    p.head_b = detail::uniform_param({cfg.L + cfg.H}, N * D, rng);
    return p;
}

// Patch embedding X_p * W_val + W_pos. x_p: (B, C*N, P) -> (B, C, N, D).
inline Tensor embed(const Tensor& x_p, const ModelParams& params, const ModelConfig& cfg) {
    if (x_p.rank() != 3 || x_p.dim(1) != cfg.C * cfg.N() || x_p.dim(2) != cfg.P) {
        throw DimensionError("embed: patches " + shape_str(x_p.shape()) + " do not match (B, " +
                             std::to_string(cfg.C * cfg.N()) + ", " + std::to_string(cfg.P) + ")");
    }
    auto x_d = add_trailing(linear(x_p, params.w_val), params.w_pos);
    return reshape(x_d, {x_p.dim(0), cfg.C, cfg.N(), cfg.D});
}

namespace detail {

inline Tensor skip_combine(const Tensor& input, const Tensor& output, const Tensor& w, const Tensor& b, SkipMode mode) {
    if (mode == SkipMode::residual_add) return add(input, output);
    return linear(concat_last(input, output), w, b);
}

}  // namespace detail

// One Mixer block on (B, C, N, D): temporal MLP along N per channel, then
// feature MLP along D, each followed by layer norm and a skip combine.
inline Tensor mlp_block_forward(const Tensor& z, const MlpBlockParams& blk, const ModelConfig& cfg, RngStream& rng,
                                bool training) {
    auto t = transpose_last2(z);
    t = grouped_linear(t, blk.t_w1, blk.t_b1);
    t = dropout(gelu(t), cfg.dropout, training, rng);
    t = grouped_linear(t, blk.t_w2, blk.t_b2);
    t = layer_norm(transpose_last2(t), blk.ln1_gamma, blk.ln1_beta);
    const auto s1 = detail::skip_combine(z, t, blk.skip1_w, blk.skip1_b, cfg.skip_mode);

    auto h = linear(s1, blk.c_w1, blk.c_b1);
    h = dropout(gelu(h), cfg.dropout, training, rng);
    h = linear(h, blk.c_w2, blk.c_b2);
    h = layer_norm(h, blk.ln2_gamma, blk.ln2_beta);
    return detail::skip_combine(s1, h, blk.skip2_w, blk.skip2_b, cfg.skip_mode);
}

inline Tensor unet_forward(const Tensor& x_d, const ModelParams& params, const ModelConfig& cfg, RngStream& rng,
                           bool training) {
    const std::size_t M = cfg.M;
    if (M == 0) return x_d;
    std::vector<Tensor> enc_out;
    enc_out.reserve(M);
    Tensor x = x_d;
    for (std::size_t i = 0; i < M; ++i) {
        x = mlp_block_forward(x, params.encoders[i], cfg, rng, training);
        enc_out.push_back(x);
    }
    Tensor y = mlp_block_forward(enc_out[M - 1], params.decoders[M - 1], cfg, rng, training);
    for (std::size_t level = M - 1; level-- > 0;) {
        const auto& dec = params.decoders[level];
        const Tensor deeper = mlp_block_forward(y, dec, cfg, rng, training);
        const Tensor& skip_in = cfg.decoder_skip == DecoderSkip::encoder_output ? enc_out[level] : y;
        const Tensor lateral = mlp_block_forward(skip_in, dec, cfg, rng, training);
        y = linear(add(deeper, lateral), params.merge_w[level], params.merge_b[level]);
    }
    return y;
}

// (B, C, N, D) -> (B, C, L+H) through the shared head.
inline Tensor head_project(const Tensor& y_hat_d, const ModelParams& params, const ModelConfig& cfg) {
    const std::size_t B = y_hat_d.dim(0);
    return linear(reshape(y_hat_d, {B, cfg.C, cfg.N() * cfg.D}), params.head_w, params.head_b);
}

// Columns L..L+H-1 of each (B, C, L+H) row, scaled back with the per-window
// input statistics.
inline Tensor denormalize_output(const Tensor& y_p, std::span<const NormStats> stats, std::size_t L, std::size_t H) {
    const std::size_t B = y_p.dim(0), C = y_p.dim(1);
    if (stats.size() != B || y_p.dim(2) != L + H) {
        throw DimensionError("denormalize_output: shape " + shape_str(y_p.shape()) + " inconsistent with L+H=" +
                             std::to_string(L + H) + " and " + std::to_string(stats.size()) + " samples");
    }
    auto slice = slice_last(y_p, L, L + H);
    std::vector<double> mult(B * C * H), shift(B * C * H);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < H; ++t) {
                mult[(b * C + c) * H + t] = stats[b].sigma[c];
                shift[(b * C + c) * H + t] = stats[b].mu[c];
            }
    return affine_constant(slice, std::move(mult), shift);
}

struct ForwardDiagnostics {
    std::vector<std::vector<double>> alpha;       // per sample
    std::vector<std::vector<double>> mean_shift;  // per sample, mu_x - mu_y
    std::vector<std::string> warnings;
    std::vector<std::pair<std::string, Shape>> shapes;
    bool unet_identity = false;
    bool correction_applied = false;
};

// Records the correction coefficients of the first forward pass and replays
// them afterwards, so finite-difference probes see the statistics as the
// constants the analytic gradient assumes.
struct CorrectionCache {
    bool frozen = false;
    std::vector<CorrectionCoefficients> per_sample;
};

struct BatchForward {
    Tensor forecast;  // (B, C, H)
    ForwardDiagnostics diagnostics;
};

inline BatchForward forward_batch(const ModelConfig& cfg, const ModelParams& params, std::span<const Matrix* const> inputs,
                                  RngStream& rng, bool training, CorrectionCache* cache = nullptr) {
    const std::size_t B = inputs.size();
    const std::size_t C = cfg.C, N = cfg.N(), D = cfg.D, P = cfg.P;
    if (B == 0) throw ContractError("forward_batch: empty batch");
    BatchForward result;
    auto& diag = result.diagnostics;

    std::vector<NormStats> stats;
    stats.reserve(B);
    std::vector<double> patches(B * C * N * P);
    for (std::size_t b = 0; b < B; ++b) {
        const Matrix& x = *inputs[b];
        if (x.rows != C || x.cols != cfg.L) {
            throw DimensionError("forward: input window is " + std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                                 ", model expects " + std::to_string(C) + "x" + std::to_string(cfg.L));
        }
        for (double v : x.data) {
            if (!std::isfinite(v)) throw DataError("forward: input window contains a non-finite value");
        }
        auto [xn, st] = normalize_instance(x);
        stats.push_back(std::move(st));
        const auto ps = patchify(xn, P, cfg.S);
        std::copy(ps.patches.data.begin(), ps.patches.data.end(), patches.begin() + static_cast<std::ptrdiff_t>(b * C * N * P));
    }
    const Tensor x_p({B, C * N, P}, std::move(patches));
    diag.shapes.emplace_back("x_p", x_p.shape());

    const Tensor x_d = embed(x_p, params, cfg);
    diag.shapes.emplace_back("x_d", x_d.shape());

    const std::size_t lag_len = cfg.correction.lag_axis == LagAxis::token ? N : D;
    const bool correct = cfg.sc_enabled && lag_len >= 2;
    if (cfg.sc_enabled && !correct) diag.warnings.push_back("stationarity correction skipped: lag axis shorter than 2");
    std::vector<CorrectionState> states;
    if (correct) {
        for (std::size_t b = 0; b < B; ++b) {
            states.push_back(record_correction_state(x_d.data().subspan(b * C * N * D, C * N * D), C, N, D,
                                                     cfg.correction, &diag.warnings));
        }
    }

    Tensor y_d = unet_forward(x_d, params, cfg, rng, training);
    diag.unet_identity = y_d.node() == x_d.node();
    diag.shapes.emplace_back("y_d", y_d.shape());

    if (correct) {
        const std::size_t block = C * N * D;
        std::vector<double> mult(B * block), shift(B * block);
        const bool replay = cache && cache->frozen;
        if (replay && cache->per_sample.size() != B) throw ContractError("forward: correction cache batch size mismatch");
        for (std::size_t b = 0; b < B; ++b) {
            auto outcome = plan_correction(states[b], y_d.data().subspan(b * block, block), C, N, D, cfg.correction,
                                           &diag.warnings);
            const auto& coeff = replay ? cache->per_sample[b] : outcome.coefficients;
            std::copy(coeff.mult.begin(), coeff.mult.end(), mult.begin() + static_cast<std::ptrdiff_t>(b * block));
            std::copy(coeff.shift.begin(), coeff.shift.end(), shift.begin() + static_cast<std::ptrdiff_t>(b * block));
            if (cache && !replay) cache->per_sample.push_back(outcome.coefficients);
            diag.alpha.push_back(std::move(outcome.alpha));
            diag.mean_shift.push_back(std::move(outcome.mean_shift));
        }
        if (cache) cache->frozen = true;
        y_d = affine_constant(y_d, std::move(mult), shift);
        diag.correction_applied = true;
    }

    const Tensor y_p = head_project(y_d, params, cfg);
    diag.shapes.emplace_back("y_p", y_p.shape());
    result.forecast = denormalize_output(y_p, stats, cfg.L, cfg.H);
    diag.shapes.emplace_back("y_hat", result.forecast.shape());
    return result;
}

struct SingleForward {
    Matrix forecast;  // C x H
    ForwardDiagnostics diagnostics;
};

inline SingleForward model_forward(const Matrix& x, const ModelParams& params, const ModelConfig& cfg, RngStream& rng,
                                   bool training) {
    const Matrix* ptr = &x;
    auto out = forward_batch(cfg, params, std::span<const Matrix* const>(&ptr, 1), rng, training);
    const auto v = out.forecast.data();
    return {Matrix(cfg.C, cfg.H, std::vector<double>(v.begin(), v.end())), std::move(out.diagnostics)};
}

// Inference over many windows in fixed-size chunks, without graph recording.
inline std::vector<Matrix> predict(const ModelConfig& cfg, const ModelParams& params, std::span<const WindowSample> windows,
                                   std::size_t chunk = 64, ForwardDiagnostics* diagnostics = nullptr) {
    NoGradGuard no_grad;
    RngStream unused(0);
    std::vector<Matrix> out;
    out.reserve(windows.size());
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
        const std::size_t end = std::min(windows.size(), start + chunk);
        std::vector<const Matrix*> inputs;
        for (std::size_t i = start; i < end; ++i) inputs.push_back(&windows[i].x);
        auto fw = forward_batch(cfg, params, inputs, unused, false);
        const auto v = fw.forecast.data();
        const std::size_t block = cfg.C * cfg.H;
        for (std::size_t b = 0; b < inputs.size(); ++b) {
            out.emplace_back(cfg.C, cfg.H, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(b * block),
                                                               v.begin() + static_cast<std::ptrdiff_t>((b + 1) * block)));
        }
        if (diagnostics) {
            auto& d = fw.diagnostics;
            diagnostics->alpha.insert(diagnostics->alpha.end(), d.alpha.begin(), d.alpha.end());
            diagnostics->mean_shift.insert(diagnostics->mean_shift.end(), d.mean_shift.begin(), d.mean_shift.end());
            diagnostics->warnings.insert(diagnostics->warnings.end(), d.warnings.begin(), d.warnings.end());
            diagnostics->unet_identity = d.unet_identity;
            diagnostics->correction_applied = d.correction_applied;
        }
    }
    return out;
}

}  // namespace umixer

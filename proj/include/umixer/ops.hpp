#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace umixer {

namespace kernel {

// out[m,n] += a[m,k] * b[k,n], all row-major. The i-k-j order keeps the
// inner loop contiguous and the summation order fixed.
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* out_row = out + i * n;
        const double* a_row = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = a_row[p];
            const double* b_row = b + p * n;
            for (std::size_t j = 0; j < n; ++j) out_row[j] += s * b_row[j];
        }
    }
}

// out[k,n] += a[m,k]^T * b[m,n]
inline void gemm_at_b_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                          std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k;
        const double* b_row = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = a_row[p];
            double* out_row = out + p * n;
            for (std::size_t j = 0; j < n; ++j) out_row[j] += s * b_row[j];
        }
    }
}

// out[m,k] += a[m,n] * b[k,n]^T, via an explicit transpose of b.
inline void gemm_a_bt_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
                          std::size_t k) {
    std::vector<double> bt(n * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    gemm_acc(a, bt.data(), out, m, n, k);
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace kernel

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

inline void accumulate(const std::shared_ptr<Node>& node, std::span<const double> g) {
    auto& buf = node->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [&] {
        return [na = a.node(), nb = b.node()](std::span<const double> g) {
            if (na->requires_grad) detail::accumulate(na, g);
            if (nb->requires_grad) detail::accumulate(nb, g);
        };
    });
}

// x + w where w's shape equals the trailing dimensions of x (broadcast over
// the leading ones).
inline Tensor add_trailing(const Tensor& x, const Tensor& w) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (ws.size() > xs.size() || !std::equal(ws.rbegin(), ws.rend(), xs.rbegin())) {
        throw DimensionError("add_trailing: " + shape_str(ws) + " is not a trailing shape of " + shape_str(xs));
    }
    const std::size_t inner = w.numel();
    const std::size_t outer = x.numel() / inner;
    std::vector<double> out(x.data().begin(), x.data().end());
    const auto wv = w.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += wv[i];
    return detail::make_result(xs, std::move(out), {x, w}, [&] {
        return [nx = x.node(), nw = w.node(), outer, inner](std::span<const double> g) {
            if (nx->requires_grad) detail::accumulate(nx, g);
            if (nw->requires_grad) {
                auto& gw = nw->grad_buffer();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < inner; ++i) gw[i] += g[o * inner + i];
            }
        };
    });
}

inline Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.numel());
    const auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * xv[i];
    return detail::make_result(x.shape(), std::move(out), {x}, [&] {
        return [nx = x.node(), factor](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
        };
    });
}

// Elementwise x * mult + shift with constant (non-differentiable) coefficient
// arrays of the same size as x.
inline Tensor affine_constant(const Tensor& x, std::vector<double> mult, const std::vector<double>& shift) {
    if (mult.size() != x.numel() || shift.size() != x.numel()) {
        throw DimensionError("affine_constant: coefficient sizes " + std::to_string(mult.size()) + "/" +
                             std::to_string(shift.size()) + " do not match " + shape_str(x.shape()));
    }
    std::vector<double> out(x.numel());
    const auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mult[i] + shift[i];
    return detail::make_result(x.shape(), std::move(out), {x}, [&] {
        return [nx = x.node(), m = std::move(mult)](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += m[i] * g[i];
        };
    });
}

// result[..., j] = sum_i x[..., i] * weight[i, j] + bias[j]. bias may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
    if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t in = weight.dim(0);
    const std::size_t out_features = weight.dim(1);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_features)) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_features;

    std::vector<double> out(rows * out_features, 0.0);
    if (bias.defined()) {
        const auto bv = bias.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_features; ++j) out[r * out_features + j] = bv[j];
    }
    kernel::gemm_acc(x.data().data(), weight.data().data(), out.data(), rows, in, out_features);

    return detail::make_result(std::move(out_shape), std::move(out), {x, weight, bias}, [&] {
        return [nx = x.node(), nw = weight.node(), nb = bias.defined() ? bias.node() : nullptr, rows, in,
                out_features](std::span<const double> g) {
            if (nx->requires_grad) {
                kernel::gemm_a_bt_acc(g.data(), nw->value.data(), nx->grad_buffer().data(), rows, out_features, in);
            }
            if (nw->requires_grad) {
                kernel::gemm_at_b_acc(nx->value.data(), g.data(), nw->grad_buffer().data(), rows, in, out_features);
            }
            if (nb && nb->requires_grad) {
                auto& gb = nb->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < out_features; ++j) gb[j] += g[r * out_features + j];
            }
        };
    });
}

// Per-group linear map. x: (B, G, R, in); weight: (Gw, in, out); bias: (Gw, out)
// with Gw == G (one weight set per group) or Gw == 1 (shared).
inline Tensor grouped_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 4 || weight.rank() != 3 || bias.rank() != 2) {
        throw DimensionError("grouped_linear: expected x rank 4, weight rank 3, bias rank 2; got " +
                             shape_str(x.shape()) + ", " + shape_str(weight.shape()) + ", " + shape_str(bias.shape()));
    }
    const std::size_t batch = x.dim(0), groups = x.dim(1), rows = x.dim(2), in = x.dim(3);
    const std::size_t wgroups = weight.dim(0), out_features = weight.dim(2);
    if (weight.dim(1) != in || (wgroups != groups && wgroups != 1) || bias.dim(0) != wgroups ||
        bias.dim(1) != out_features) {
        throw DimensionError("grouped_linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
    }
    std::vector<double> out(batch * groups * rows * out_features);
    const auto xv = x.data();
    const auto wv = weight.data();
    const auto bv = bias.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t gidx = 0; gidx < groups; ++gidx) {
            const std::size_t wg = wgroups == 1 ? 0 : gidx;
            double* o = out.data() + (b * groups + gidx) * rows * out_features;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < out_features; ++j) o[r * out_features + j] = bv[wg * out_features + j];
            kernel::gemm_acc(xv.data() + (b * groups + gidx) * rows * in, wv.data() + wg * in * out_features, o,
                             rows, in, out_features);
        }
    }
    return detail::make_result({batch, groups, rows, out_features}, std::move(out), {x, weight, bias}, [&] {
        return [nx = x.node(), nw = weight.node(), nb = bias.node(), batch, groups, rows, in, out_features,
                wgroups](std::span<const double> g) {
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t gidx = 0; gidx < groups; ++gidx) {
                    const std::size_t wg = wgroups == 1 ? 0 : gidx;
                    const double* go = g.data() + (b * groups + gidx) * rows * out_features;
                    if (nx->requires_grad) {
                        kernel::gemm_a_bt_acc(go, nw->value.data() + wg * in * out_features,
                                              nx->grad_buffer().data() + (b * groups + gidx) * rows * in, rows,
                                              out_features, in);
                    }
                    if (nw->requires_grad) {
                        kernel::gemm_at_b_acc(nx->value.data() + (b * groups + gidx) * rows * in, go,
                                              nw->grad_buffer().data() + wg * in * out_features, rows, in,
                                              out_features);
                    }
                    if (nb->requires_grad) {
                        auto& gb = nb->grad_buffer();
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < out_features; ++j)
                                gb[wg * out_features + j] += go[r * out_features + j];
                    }
                }
            }
        };
    });
}

// x * Phi(x) with the exact normal CDF.
inline Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * kernel::std_normal_cdf(xv[i]);
    return detail::make_result(x.shape(), std::move(out), {x}, [&] {
        return [nx = x.node()](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = nx->value[i];
                gx[i] += g[i] * (kernel::std_normal_cdf(v) + v * kernel::std_normal_pdf(v));
            }
        };
    });
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes every trailing-axis slice with its population variance.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                             shape_str(beta.shape()) + " do not match input " + shape_str(x.shape()));
    }
    if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (row[j] - mean) * inv_std[r];
            out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x, gamma, beta}, [&] {
        return [nx = x.node(), ng = gamma.node(), nb = beta.node(), xhat = std::move(xhat),
                inv_std = std::move(inv_std), rows, d](std::span<const double> g) {
            if (ng->requires_grad || nb->requires_grad) {
                auto& gg = ng->grad_buffer();
                auto& gb = nb->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                        gb[j] += g[r * d + j];
                    }
            }
            if (nx->requires_grad) {
                auto& gx = nx->grad_buffer();
                std::vector<double> dxhat(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dxhat = 0.0;
                    double mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = g[r * d + j] * ng->value[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[r * d + j];
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
                    }
                }
            }
        };
    });
}

// Inverted dropout: kept entries are scaled by 1/(1-rate) so inference is the identity.
inline Tensor dropout(const Tensor& x, double rate, bool training, RngStream& rng) {
    if (!(rate >= 0.0) || rate >= 1.0) {
        throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
    std::vector<double> out(x.numel());
    const auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return detail::make_result(x.shape(), std::move(out), {x}, [&] {
        return [nx = x.node(), mask = std::move(mask)](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += mask[i] * g[i];
        };
    });
}

// Swaps the last two axes.
inline Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2 for shape " + shape_str(x.shape()));
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.shape()[x.rank() - 2];
    const std::size_t outer = x.numel() / (rows * cols);
    Shape out_shape = x.shape();
    std::swap(out_shape[x.rank() - 1], out_shape[x.rank() - 2]);
    std::vector<double> out(x.numel());
    const auto xv = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out[o * rows * cols + c * rows + r] = xv[o * rows * cols + r * cols + c];
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [&] {
        return [nx = x.node(), outer, rows, cols](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c)
                        gx[o * rows * cols + r * cols + c] += g[o * rows * cols + c * rows + r];
        };
    });
}

// Concatenation along the last axis; leading dimensions must agree.
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
        throw DimensionError("concat_last: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t da = a.shape().back();
    const std::size_t db = b.shape().back();
    const std::size_t rows = a.numel() / da;
    Shape out_shape = a.shape();
    out_shape.back() = da + db;
    std::vector<double> out(rows * (da + db));
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.data() + r * da, da, out.data() + r * (da + db));
        std::copy_n(bv.data() + r * db, db, out.data() + r * (da + db) + da);
    }
    return detail::make_result(std::move(out_shape), std::move(out), {a, b}, [&] {
        return [na = a.node(), nb = b.node(), rows, da, db](std::span<const double> g) {
            if (na->requires_grad) {
                auto& ga = na->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < da; ++j) ga[r * da + j] += g[r * (da + db) + j];
            }
            if (nb->requires_grad) {
                auto& gb = nb->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < db; ++j) gb[r * db + j] += g[r * (da + db) + da + j];
            }
        };
    });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_result(std::move(shape), std::move(out), {x}, [&] {
        return [nx = x.node()](std::span<const double> g) { detail::accumulate(nx, g); };
    });
}

// Columns [begin, end) of the last axis.
inline Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t cols = x.shape().back();
    if (begin >= end || end > cols) {
        throw DimensionError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of bounds for " + shape_str(x.shape()));
    }
    const std::size_t width = end - begin;
    const std::size_t rows = x.numel() / cols;
    Shape out_shape = x.shape();
    out_shape.back() = width;
    std::vector<double> out(rows * width);
    const auto xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * cols + begin, width, out.data() + r * width);
    return detail::make_result(std::move(out_shape), std::move(out), {x}, [&] {
        return [nx = x.node(), rows, cols, begin, width](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < width; ++j) gx[r * cols + begin + j] += g[r * width + j];
        };
    });
}

inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return detail::make_result({1}, {total}, {x}, [&] {
        return [nx = x.node()](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (auto& v : gx) v += g[0];
        };
    });
}

inline Tensor sum_squares(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v * v;
    return detail::make_result({1}, {total}, {x}, [&] {
        return [nx = x.node()](std::span<const double> g) {
            auto& gx = nx->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * nx->value[i] * g[0];
        };
    });
}

// mean |pred - target| with a constant target; subgradient 0 at exact ties.
inline Tensor mean_abs_error(const Tensor& pred, std::span<const double> target) {
    if (target.size() != pred.numel()) {
        throw DimensionError("mean_abs_error: prediction " + shape_str(pred.shape()) + " vs target of " +
                             std::to_string(target.size()) + " values");
    }
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    std::vector<double> sign(pred.numel());
    double total = 0.0;
    const auto pv = pred.data();
    for (std::size_t i = 0; i < sign.size(); ++i) {
        const double diff = pv[i] - target[i];
        total += std::abs(diff);
        sign[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    }
    return detail::make_result({1}, {total * inv_n}, {pred}, [&] {
        return [np = pred.node(), sign = std::move(sign), inv_n](std::span<const double> g) {
            auto& gp = np->grad_buffer();
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += sign[i] * inv_n * g[0];
        };
    });
}

}  // namespace umixer

#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace umixer {

using Complex = std::complex<double>;

namespace detail {

// FFTW plans are cached per (length, direction); the planner itself is not
// thread-safe, executing a plan on new arrays is.
class FftPlanCache {
public:
    static FftPlanCache& instance() {
        static FftPlanCache cache;
        return cache;
    }

    fftw_plan get(std::size_t n, int sign) {
        std::lock_guard lock(mutex_);
        auto key = std::make_pair(n, sign);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        std::vector<Complex> in(n), out(n);
        fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()),
                                          reinterpret_cast<fftw_complex*>(out.data()), sign,
                                          FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, plan);
        return plan;
    }

    ~FftPlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

private:
    FftPlanCache() = default;
    std::mutex mutex_;
    std::map<std::pair<std::size_t, int>, fftw_plan> plans_;
};

inline std::vector<Complex> run_dft(std::vector<Complex> in, int sign) {
    std::vector<Complex> out(in.size());
    fftw_plan plan = FftPlanCache::instance().get(in.size(), sign);
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()));
    return out;
}

}  // namespace detail

// Full complex spectrum X[k] = sum_t x[t] exp(-2 pi i k t / n) of a real sequence.
inline std::vector<Complex> fft(std::span<const double> x) {
    if (x.empty()) throw ParameterError("fft: empty input");
    std::vector<Complex> in(x.begin(), x.end());
    return detail::run_dft(std::move(in), FFTW_FORWARD);
}

// Inverse transform with 1/n normalization; returns the real part.
inline std::vector<double> ifft(std::span<const Complex> spectrum) {
    if (spectrum.empty()) throw ParameterError("ifft: empty input");
    auto out = detail::run_dft(std::vector<Complex>(spectrum.begin(), spectrum.end()), FFTW_BACKWARD);
    const double inv_n = 1.0 / static_cast<double>(spectrum.size());
    std::vector<double> real(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) real[i] = out[i].real() * inv_n;
    return real;
}

}  // namespace umixer

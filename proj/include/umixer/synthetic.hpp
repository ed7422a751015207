#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>

#include "data.hpp"
#include "rng.hpp"

namespace umixer {

struct SinusoidTrendSpec {
    std::size_t channels = 2;
    std::size_t length = 2000;
    double noise = 0.0;
    std::uint64_t seed = 0;
};

// Channel c: sin with period 24 + 12c plus a slow linear trend and optional
// Gaussian noise.
inline RawSeries sinusoid_trend(const SinusoidTrendSpec& spec = {}) {
    RngStream rng(spec.seed);
    RawSeries s;
    s.values = Matrix(spec.channels, spec.length);
    for (std::size_t c = 0; c < spec.channels; ++c) {
        s.channel_names.push_back("ch" + std::to_string(c));
        const double period = 24.0 + 12.0 * static_cast<double>(c);
        const double phase = 0.5 * static_cast<double>(c);
        const double slope = (c % 2 == 0 ? 1.0 : -0.5) / static_cast<double>(spec.length);
        for (std::size_t t = 0; t < spec.length; ++t) {
            const double tt = static_cast<double>(t);
            double v = std::sin(2.0 * std::numbers::pi * tt / period + phase) + slope * tt;
            if (spec.noise > 0.0) v += spec.noise * rng.normal();
            s.values(c, t) = v;
        }
    }
    for (std::size_t t = 0; t < spec.length; ++t) s.timestamps.push_back(std::to_string(t));
    return s;
}

struct LevelShiftSpec {
    std::size_t channels = 2;
    std::size_t length = 1500;
    double noise = 0.1;
    double shift = 3.0;          // added to every value from shift_start on
    double shift_start = 0.85;   // fraction of the series; inside the default test segment
    double amplitude_gain = 1.0; // seasonal amplitude multiplier after the shift
    std::uint64_t seed = 0;
};

// Seasonal series whose final segment carries a level shift that the
// training segment never shows.
inline RawSeries level_shift_series(const LevelShiftSpec& spec = {}) {
    RngStream rng(spec.seed);
    RawSeries s;
    s.values = Matrix(spec.channels, spec.length);
    const auto start = static_cast<std::size_t>(spec.shift_start * static_cast<double>(spec.length));
    for (std::size_t c = 0; c < spec.channels; ++c) {
        s.channel_names.push_back("ch" + std::to_string(c));
        const double period = 24.0 + 8.0 * static_cast<double>(c);
        for (std::size_t t = 0; t < spec.length; ++t) {
            const double tt = static_cast<double>(t);
            const bool after = t >= start;
            double v = (after ? spec.amplitude_gain : 1.0) * std::sin(2.0 * std::numbers::pi * tt / period);
            if (after) v += spec.shift;
            v += spec.noise * rng.normal();
            s.values(c, t) = v;
        }
    }
    for (std::size_t t = 0; t < spec.length; ++t) s.timestamps.push_back(std::to_string(t));
    return s;
}

}  // namespace umixer

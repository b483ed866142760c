#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mflb/traffic.hpp"

namespace mflb::mfa {

struct WindowConfig {
    std::size_t length = 256;  // T, in samples
    std::size_t shift = 64;    // delta T, in samples

    void validate() const;
};

/// A window view into a series; `values` borrows from the series it was cut from.
struct WindowSlice {
    std::size_t start = 0;
    std::span<const double> values;
};

/// floor((len - T) / shift) + 1, or 0 when len < T.
std::size_t window_count(std::size_t len, const WindowConfig& cfg);

/// Windows starting at 0, shift, 2*shift, ... each with exactly T samples.
/// Throws std::invalid_argument when the series is shorter than T.
std::vector<WindowSlice> sliding_windows(std::span<const double> series, const WindowConfig& cfg);

struct LogLogFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// OLS on (ln s, ln F). A perfectly flat response reports r2 = 1.
LogLogFit fit_loglog(std::span<const std::pair<double, double>> points);

std::vector<double> default_q_grid();
/// `count` log-spaced integer scales from `min_scale` to n/4, duplicates removed.
std::vector<std::size_t> default_scale_grid(std::size_t n, std::size_t count = 16, std::size_t min_scale = 16);

struct MfdfaConfig {
    std::vector<double> q_grid;
    std::vector<std::size_t> scales;
    int order = 1;  // detrending polynomial degree

    /// Default grids for a series of length n.
    static MfdfaConfig defaults(std::size_t n);
    /// Checks grid invariants against a series of length n; throws std::invalid_argument.
    void validate(std::size_t n) const;
};

struct HurstSpectrum {
    std::vector<double> q_grid;
    std::vector<double> h;
    std::vector<double> fit_r2;
    double H = 0.0;        // h at q = 2
    double delta_h = 0.0;  // h(q_min) - h(q_max)

    bool low_confidence(double r2_floor = 0.95) const;
};

/// Builds a spectrum and fills H and delta_h from the per-q values. q = 2 must be in the grid.
HurstSpectrum make_spectrum(std::vector<double> q_grid, std::vector<double> h, std::vector<double> fit_r2);

/// Multifractal detrended fluctuation analysis with forward and backward
/// segmentation. Throws std::invalid_argument on a constant series or a bad grid.
HurstSpectrum mfdfa(std::span<const double> series, const MfdfaConfig& cfg);
inline HurstSpectrum mfdfa(const traffic::TimeSeries& series, const MfdfaConfig& cfg) {
    return mfdfa(std::span<const double>(series.values), cfg);
}

/// F_q(s) for each q (outer) and scale (inner). Exposed for diagnostics.
std::vector<std::vector<double>> fluctuation_functions(std::span<const double> series, const MfdfaConfig& cfg);

/// (H, delta_h) as stored; throws std::invalid_argument if q = 2 is absent.
std::pair<double, double> spectrum_summary(const HurstSpectrum& spec);

}  // namespace mflb::mfa

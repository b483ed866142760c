#include "mflb/mfa.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mflb::mfa {

namespace {

std::size_t index_of_q2(const std::vector<double>& q_grid) {
    for (std::size_t i = 0; i < q_grid.size(); ++i)
        if (q_grid[i] == 2.0) return i;
    throw std::invalid_argument("q = 2 is not in the q grid");
}

// Orthonormal basis of polynomials up to `order` sampled on s points.
Eigen::MatrixXd detrend_basis(std::size_t s, int order) {
    const auto cols = static_cast<Eigen::Index>(order + 1);
    Eigen::MatrixXd vander(static_cast<Eigen::Index>(s), cols);
    const double mid = 0.5 * static_cast<double>(s - 1);
    for (std::size_t i = 0; i < s; ++i) {
        const double x = (static_cast<double>(i) - mid) / static_cast<double>(s);
        double p = 1.0;
        for (Eigen::Index c = 0; c < cols; ++c) {
            vander(static_cast<Eigen::Index>(i), c) = p;
            p *= x;
        }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(vander);
    return qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(s), cols);
}

}  // namespace

void WindowConfig::validate() const {
    if (length == 0) throw std::invalid_argument("window length T must be > 0");
    if (shift == 0 || shift > length) throw std::invalid_argument("window shift must satisfy 0 < shift <= T");
}

std::size_t window_count(std::size_t len, const WindowConfig& cfg) {
    cfg.validate();
    if (len < cfg.length) return 0;
    return (len - cfg.length) / cfg.shift + 1;
}

std::vector<WindowSlice> sliding_windows(std::span<const double> series, const WindowConfig& cfg) {
    cfg.validate();
    if (series.size() < cfg.length)
        throw std::invalid_argument("series of length " + std::to_string(series.size()) +
                                    " is shorter than the window length " + std::to_string(cfg.length));
    const std::size_t count = window_count(series.size(), cfg);
    std::vector<WindowSlice> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t start = k * cfg.shift;
        out.push_back({start, series.subspan(start, cfg.length)});
    }
    return out;
}

LogLogFit fit_loglog(std::span<const std::pair<double, double>> points) {
    if (points.size() < 2) throw std::invalid_argument("fit_loglog needs at least 2 points");
    std::vector<double> xs, ys;
    xs.reserve(points.size());
    ys.reserve(points.size());
    for (const auto& [s, f] : points) {
        if (!(s > 0.0) || !(f > 0.0)) throw std::invalid_argument("fit_loglog needs positive coordinates");
        xs.push_back(std::log(s));
        ys.push_back(std::log(f));
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_loglog needs at least two distinct scales");
    LogLogFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (syy == 0.0) {
        fit.r2 = 1.0;
    } else {
        double ss_res = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
            ss_res += r * r;
        }
        fit.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    }
    return fit;
}

std::vector<double> default_q_grid() { return {-4.0, -3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 3.0, 4.0}; }

std::vector<std::size_t> default_scale_grid(std::size_t n, std::size_t count, std::size_t min_scale) {
    const std::size_t max_scale = n / 4;
    if (max_scale < min_scale)
        throw std::invalid_argument("series of length " + std::to_string(n) + " is too short for the default scale grid (needs >= " +
                                    std::to_string(4 * min_scale) + ")");
    std::vector<std::size_t> out;
    if (count < 2 || max_scale == min_scale) return {min_scale};
    const double ratio = std::log(static_cast<double>(max_scale) / static_cast<double>(min_scale));
    for (std::size_t k = 0; k < count; ++k) {
        const double s = static_cast<double>(min_scale) *
                         std::exp(ratio * static_cast<double>(k) / static_cast<double>(count - 1));
        auto v = static_cast<std::size_t>(std::llround(s));
        v = std::clamp(v, min_scale, max_scale);
        if (out.empty() || v > out.back()) out.push_back(v);
    }
    return out;
}

MfdfaConfig MfdfaConfig::defaults(std::size_t n) { return MfdfaConfig{default_q_grid(), default_scale_grid(n), 1}; }

void MfdfaConfig::validate(std::size_t n) const {
    if (order < 1) throw std::invalid_argument("detrending order must be >= 1");
    if (q_grid.empty()) throw std::invalid_argument("q grid is empty");
    for (std::size_t i = 0; i < q_grid.size(); ++i) {
        if (q_grid[i] == 0.0) throw std::invalid_argument("q grid must exclude 0");
        if (!std::isfinite(q_grid[i])) throw std::invalid_argument("q grid contains a non-finite value");
        if (i > 0 && !(q_grid[i] > q_grid[i - 1])) throw std::invalid_argument("q grid must be strictly increasing");
    }
    index_of_q2(q_grid);
    if (scales.size() < 2) throw std::invalid_argument("scale grid needs at least 2 scales");
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (scales[i] < static_cast<std::size_t>(order) + 2)
            throw std::invalid_argument("scale " + std::to_string(scales[i]) + " is below order + 2");
        if (i > 0 && scales[i] <= scales[i - 1]) throw std::invalid_argument("scale grid must be strictly increasing");
    }
    if (scales.back() > n / 4)
        throw std::invalid_argument("largest scale " + std::to_string(scales.back()) + " exceeds series length / 4 (" +
                                    std::to_string(n / 4) + ")");
}

bool HurstSpectrum::low_confidence(double r2_floor) const {
    return std::any_of(fit_r2.begin(), fit_r2.end(), [r2_floor](double r) { return r < r2_floor; });
}

HurstSpectrum make_spectrum(std::vector<double> q_grid, std::vector<double> h, std::vector<double> fit_r2) {
    if (q_grid.empty() || h.size() != q_grid.size() || fit_r2.size() != q_grid.size())
        throw std::invalid_argument("spectrum arrays must be nonempty and of equal length");
    HurstSpectrum out;
    out.H = h[index_of_q2(q_grid)];
    out.delta_h = h.front() - h.back();
    out.q_grid = std::move(q_grid);
    out.h = std::move(h);
    out.fit_r2 = std::move(fit_r2);
    return out;
}

std::vector<std::vector<double>> fluctuation_functions(std::span<const double> series, const MfdfaConfig& cfg) {
    const std::size_t n = series.size();
    cfg.validate(n);

    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : series) var += (v - mean) * (v - mean);
    if (!(var > 0.0)) throw std::invalid_argument("mfdfa: series is constant");

    std::vector<double> profile(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += series[i] - mean;
        profile[i] = acc;
    }

    std::vector<std::vector<double>> fq(cfg.q_grid.size(), std::vector<double>(cfg.scales.size()));
    std::vector<double> log_f2;
    for (std::size_t si = 0; si < cfg.scales.size(); ++si) {
        const std::size_t s = cfg.scales[si];
        const std::size_t segments = n / s;
        const Eigen::MatrixXd basis = detrend_basis(s, cfg.order);
        log_f2.clear();
        auto add_segment = [&](std::size_t start) {
            Eigen::Map<const Eigen::VectorXd> y(profile.data() + start, static_cast<Eigen::Index>(s));
            const Eigen::VectorXd resid = y - basis * (basis.transpose() * y);
            const double f2 = resid.squaredNorm() / static_cast<double>(s);
            // Segments fitted exactly by the trend carry no fluctuation; they are skipped.
            if (f2 > 0.0) log_f2.push_back(std::log(f2));
        };
        for (std::size_t v = 0; v < segments; ++v) add_segment(v * s);
        for (std::size_t v = 0; v < segments; ++v) add_segment(n - (v + 1) * s);
        if (log_f2.empty()) throw std::invalid_argument("mfdfa: series has no fluctuation at scale " + std::to_string(s));

        for (std::size_t qi = 0; qi < cfg.q_grid.size(); ++qi) {
            const double half_q = 0.5 * cfg.q_grid[qi];
            double peak = -std::numeric_limits<double>::infinity();
            for (double l : log_f2) peak = std::max(peak, half_q * l);
            double sum = 0.0;
            for (double l : log_f2) sum += std::exp(half_q * l - peak);
            const double log_mean = peak + std::log(sum / static_cast<double>(log_f2.size()));
            fq[qi][si] = std::exp(log_mean / cfg.q_grid[qi]);
        }
    }
    return fq;
}

HurstSpectrum mfdfa(std::span<const double> series, const MfdfaConfig& cfg) {
    const auto fq = fluctuation_functions(series, cfg);
    std::vector<double> h(cfg.q_grid.size()), r2(cfg.q_grid.size());
    std::vector<std::pair<double, double>> pts(cfg.scales.size());
    for (std::size_t qi = 0; qi < cfg.q_grid.size(); ++qi) {
        for (std::size_t si = 0; si < cfg.scales.size(); ++si)
            pts[si] = {static_cast<double>(cfg.scales[si]), fq[qi][si]};
        const auto fit = fit_loglog(pts);
        h[qi] = fit.slope;
        r2[qi] = fit.r2;
    }
    return make_spectrum(cfg.q_grid, std::move(h), std::move(r2));
}

std::pair<double, double> spectrum_summary(const HurstSpectrum& spec) {
    index_of_q2(spec.q_grid);
    return {spec.H, spec.delta_h};
}

}  // namespace mflb::mfa

#include "mflb/traffic.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mflb/rng.hpp"
#include "text_format.hpp"

namespace mflb::traffic {

namespace {

// FFTW's planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

void fft_inplace(std::vector<std::complex<double>>& data) {
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan = fftw_plan_dft_1d(static_cast<int>(data.size()), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(plan);
}

double fgn_autocov(double hurst, double k) {
    const double two_h = 2.0 * hurst;
    return 0.5 * (std::pow(std::abs(k + 1.0), two_h) - 2.0 * std::pow(std::abs(k), two_h) +
                  std::pow(std::abs(k - 1.0), two_h));
}

}  // namespace

void TimeSeries::validate() const {
    if (values.empty()) throw std::invalid_argument("time series is empty");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("time series dt must be > 0");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("time series contains a non-finite sample");
}

void FlowSpec::validate() const {
    if (class_id < 1) throw std::invalid_argument("flow class_id must be >= 1");
    if (priority < 0) throw std::invalid_argument("flow priority must be >= 0");
    if (!(base_rate >= 0.0) || !std::isfinite(base_rate)) throw std::invalid_argument("flow rate must be >= 0");
    if (!(hurst > 0.0 && hurst < 1.0)) throw std::invalid_argument("flow hurst must lie in (0,1)");
    if (!(cascade_weight > 0.0 && cascade_weight < 1.0))
        throw std::invalid_argument("flow cascade_weight must lie in (0,1)");
    if (!(mean_size > 0.0) || !std::isfinite(mean_size)) throw std::invalid_argument("flow mean_size must be > 0");
    if (!(lifetime > 0.0)) throw std::invalid_argument("flow lifetime must be > 0");
}

TimeSeries gen_fgn(double hurst, std::size_t n, double sigma, std::uint64_t seed, double dt) {
    if (!(hurst > 0.0 && hurst < 1.0)) throw std::invalid_argument("gen_fgn: H must lie in (0,1)");
    if (n < 2) throw std::invalid_argument("gen_fgn: n must be >= 2");
    if (!(sigma > 0.0)) throw std::invalid_argument("gen_fgn: sigma must be > 0");
    if (!(dt > 0.0)) throw std::invalid_argument("gen_fgn: dt must be > 0");

    // Circulant row c = [g(0) .. g(n), g(n-1) .. g(1)] of length m = 2n.
    const std::size_t m = 2 * n;
    std::vector<std::complex<double>> eig(m);
    for (std::size_t k = 0; k <= n; ++k) eig[k] = fgn_autocov(hurst, static_cast<double>(k));
    for (std::size_t k = n + 1; k < m; ++k) eig[k] = eig[m - k];
    fft_inplace(eig);

    double max_eig = 0.0;
    for (const auto& e : eig) max_eig = std::max(max_eig, e.real());
    std::vector<double> lambda(m);
    for (std::size_t k = 0; k < m; ++k) {
        double v = eig[k].real();
        if (v < 0.0) {
            if (v < -1e-9 * max_eig) throw std::runtime_error("gen_fgn: circulant embedding is not nonnegative definite");
            v = 0.0;
        }
        lambda[k] = v;
    }

    Rng rng = make_stream(seed, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double md = static_cast<double>(m);
    std::vector<std::complex<double>> w(m);
    w[0] = std::sqrt(lambda[0] / md) * normal(rng);
    w[n] = std::sqrt(lambda[n] / md) * normal(rng);
    for (std::size_t k = 1; k < n; ++k) {
        const double scale = std::sqrt(lambda[k] / (2.0 * md));
        const double re = normal(rng);
        const double im = normal(rng);
        w[k] = {scale * re, scale * im};
        w[m - k] = std::conj(w[k]);
    }
    fft_inplace(w);

    TimeSeries out;
    out.dt = dt;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = sigma * w[i].real();
    return out;
}

TimeSeries gen_binomial_cascade(double a, int depth, bool randomize, std::uint64_t seed) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("gen_binomial_cascade: a must lie in (0,1)");
    if (depth < 1 || depth > 30) throw std::invalid_argument("gen_binomial_cascade: depth must lie in [1,30]");

    Rng rng = make_stream(seed, 0);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> cur{1.0};
    for (int level = 0; level < depth; ++level) {
        std::vector<double> next(cur.size() * 2);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const bool swap = randomize && coin(rng);
            next[2 * i] = cur[i] * (swap ? 1.0 - a : a);
            next[2 * i + 1] = cur[i] * (swap ? a : 1.0 - a);
        }
        cur = std::move(next);
    }
    return TimeSeries{std::move(cur), 1.0};
}

double analytic_binomial_h(double a, double q) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("analytic_binomial_h: a must lie in (0,1)");
    if (q == 0.0) throw std::invalid_argument("analytic_binomial_h: q must be nonzero");
    return 1.0 / q - std::log(std::pow(a, q) + std::pow(1.0 - a, q)) / (q * std::log(2.0));
}

PacketStream gen_arrivals(const TimeSeries& rate, const FlowSpec& spec, double horizon, std::uint64_t seed,
                          std::span<const RateStep> steps) {
    rate.validate();
    spec.validate();
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("gen_arrivals: horizon must be > 0");
    for (double v : rate.values)
        if (v < 0.0) throw std::invalid_argument("gen_arrivals: negative rate sample");

    PacketStream out;
    const double mean = std::accumulate(rate.values.begin(), rate.values.end(), 0.0) / static_cast<double>(rate.size());
    if (spec.base_rate == 0.0 || mean == 0.0) return out;

    Rng rng = make_stream(seed, 0);
    std::exponential_distribution<double> size_dist(1.0 / spec.mean_size);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<RateStep> sorted_steps(steps.begin(), steps.end());
    std::sort(sorted_steps.begin(), sorted_steps.end(), [](const RateStep& l, const RateStep& r) { return l.at < r.at; });

    const auto n_slots = static_cast<std::size_t>(std::ceil(horizon / rate.dt));
    std::uint64_t seq = 0;
    std::vector<double> times;
    for (std::size_t slot = 0; slot < n_slots; ++slot) {
        const double t0 = static_cast<double>(slot) * rate.dt;
        const double t1 = std::min(horizon, t0 + rate.dt);
        if (t1 <= t0) break;
        double factor = 1.0;
        for (const auto& s : sorted_steps)
            if (s.at <= t0) factor *= s.factor;
        const double intensity = spec.base_rate * factor * rate.values[slot % rate.size()] / mean;
        const double expected = intensity * (t1 - t0);
        if (!(expected > 0.0)) continue;
        std::poisson_distribution<long long> count_dist(expected);
        const long long count = count_dist(rng);
        times.clear();
        for (long long k = 0; k < count; ++k) times.push_back(t0 + unif(rng) * (t1 - t0));
        std::sort(times.begin(), times.end());
        for (double t : times) {
            if (!out.empty() && t <= out.back().arrival_time) t = std::nextafter(out.back().arrival_time, horizon + 1.0);
            if (t > horizon) break;
            Packet p;
            p.id = make_packet_id(spec.class_id, seq++);
            p.class_id = spec.class_id;
            p.priority = spec.priority;
            p.arrival_time = t;
            do {
                p.size = size_dist(rng);
            } while (!(p.size > 0.0));
            p.expiry_time = t + spec.lifetime;
            out.push_back(p);
        }
    }
    return out;
}

PacketStream merge_streams(std::span<const PacketStream> streams) {
    std::size_t total = 0;
    for (std::size_t s = 0; s < streams.size(); ++s) {
        const auto& st = streams[s];
        for (std::size_t i = 1; i < st.size(); ++i)
            if (st[i].arrival_time < st[i - 1].arrival_time)
                throw std::invalid_argument("merge_streams: input stream " + std::to_string(s) + " is not time-ordered");
        total += st.size();
    }
    PacketStream out;
    out.reserve(total);
    for (const auto& st : streams) out.insert(out.end(), st.begin(), st.end());
    std::stable_sort(out.begin(), out.end(), [](const Packet& l, const Packet& r) {
        if (l.arrival_time != r.arrival_time) return l.arrival_time < r.arrival_time;
        if (l.class_id != r.class_id) return l.class_id < r.class_id;
        return l.id < r.id;
    });
    return out;
}

TimeSeries clip_nonnegative(TimeSeries series) {
    for (double& v : series.values) v = std::max(0.0, v);
    return series;
}

std::uint64_t stream_digest(std::span<const Packet> packets) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : packets) {
        mix(&p.id, sizeof p.id);
        mix(&p.class_id, sizeof p.class_id);
        mix(&p.priority, sizeof p.priority);
        mix(&p.arrival_time, sizeof p.arrival_time);
        mix(&p.size, sizeof p.size);
        mix(&p.expiry_time, sizeof p.expiry_time);
    }
    return h;
}

void write_series_csv(std::ostream& out, const TimeSeries& series) {
    out << "slot_index,value\n";
    for (std::size_t i = 0; i < series.size(); ++i) out << i << ',' << detail::fmt_double(series.values[i]) << '\n';
}

TimeSeries read_series_csv(std::istream& in, double dt) {
    TimeSeries out;
    out.dt = dt;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line.rfind("slot_index,value", 0) != 0)
                throw std::runtime_error("series CSV line 1: expected header 'slot_index,value'");
            header_seen = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("series CSV line " + std::to_string(line_no) + ": expected two columns");
        try {
            std::size_t used = 0;
            const std::string field = line.substr(comma + 1);
            const double v = std::stod(field, &used);
            out.values.push_back(v);
        } catch (const std::exception&) {
            throw std::runtime_error("series CSV line " + std::to_string(line_no) + ": bad value");
        }
    }
    if (!header_seen) throw std::runtime_error("series CSV: missing header");
    out.validate();
    return out;
}

void write_packets_csv(std::ostream& out, std::span<const Packet> packets) {
    out << "id,class,priority,arrival_time,size,expiry_time\n";
    for (const auto& p : packets) {
        out << p.id << ',' << p.class_id << ',' << p.priority << ',' << detail::fmt_double(p.arrival_time) << ','
            << detail::fmt_double(p.size) << ',' << detail::fmt_double(p.expiry_time) << '\n';
    }
}

}  // namespace mflb::traffic

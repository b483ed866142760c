#include "mflb/balancer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "text_format.hpp"

namespace mflb::balancer {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void normalize_row(std::vector<double>& row) {
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    if (sum > 0.0) {
        for (double& v : row) v /= sum;
    } else {
        std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
    }
}

}  // namespace

const std::vector<double>& FlowAssignment::row(int class_id) const {
    for (std::size_t i = 0; i < class_ids.size(); ++i)
        if (class_ids[i] == class_id) return w[i];
    throw std::out_of_range("assignment has no row for class " + std::to_string(class_id));
}

FlowStats collect_stats(std::span<const qsim::TraceEvent> events, std::span<const int> class_ids, double window_start,
                        double window_span, double dt, std::span<const qsim::Utilization> snapshots,
                        const FlowStats* prior) {
    if (!(window_span > 0.0)) throw std::invalid_argument("collect_stats: window span must be > 0");
    if (!(dt > 0.0)) throw std::invalid_argument("collect_stats: dt must be > 0");
    const double window_end = window_start + window_span;
    const auto slots = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(window_span / dt)));

    std::map<int, std::uint64_t> arrivals;
    std::map<int, std::vector<double>> slot_work;
    for (int cls : class_ids) {
        arrivals[cls] = 0;
        slot_work[cls].assign(slots, 0.0);
    }
    auto slot_of = [&](double t) {
        return std::min(slots - 1, static_cast<std::size_t>(std::floor((t - window_start) / dt)));
    };

    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& ev = events[i];
        if (ev.time < window_start || ev.time >= window_end) continue;
        if (ev.kind == qsim::EventKind::arrival) {
            ++arrivals[ev.class_id];
            auto& sw = slot_work[ev.class_id];
            if (sw.empty()) sw.assign(slots, 0.0);
            sw[slot_of(ev.time)] += ev.size;
        } else if (ev.kind == qsim::EventKind::loss_full && i > 0) {
            // Rejected at admission: the loss directly follows the packet's own arrival.
            const auto& prev = events[i - 1];
            if (prev.kind == qsim::EventKind::arrival && prev.packet_id == ev.packet_id && prev.time == ev.time)
                slot_work[ev.class_id][slot_of(ev.time)] -= ev.size;
        }
    }

    FlowStats out;
    for (const auto& [cls, count] : arrivals) {
        ClassStats cs;
        cs.lambda_hat = static_cast<double>(count) / window_span;
        const auto& sw = slot_work[cls];
        const double total = std::accumulate(sw.begin(), sw.end(), 0.0);
        cs.mean_rate = std::max(0.0, total / window_span);
        if (cs.mean_rate > 0.0 && sw.size() >= 2) {
            const double mean = total / static_cast<double>(sw.size());
            double ss = 0.0;
            for (double v : sw) ss += (v - mean) * (v - mean);
            cs.variance_coef = ss / static_cast<double>(sw.size() - 1) / cs.mean_rate;
        }
        out.classes[cls] = cs;
    }

    if (prior) out.util_history = prior->util_history;
    if (out.util_history.size() < snapshots.size()) out.util_history.resize(snapshots.size());
    for (std::size_t j = 0; j < snapshots.size(); ++j) out.util_history[j].push_back({window_end, snapshots[j].total});
    return out;
}

double effective_bandwidth(double m, double a, double H, double x, double eps, std::optional<double> delta_h,
                           double gamma) {
    if (!(m > 0.0)) throw std::invalid_argument("effective_bandwidth: mean rate m must be > 0");
    if (!(a > 0.0)) throw std::invalid_argument("effective_bandwidth: variance coefficient a must be > 0");
    if (!(H > 0.0 && H < 1.0)) throw std::invalid_argument("effective_bandwidth: H must lie in (0,1)");
    if (!(x > 0.0)) throw std::invalid_argument("effective_bandwidth: buffer x must be > 0");
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("effective_bandwidth: eps must lie in (0,1)");
    if (!(gamma >= 0.0)) throw std::invalid_argument("effective_bandwidth: gamma must be >= 0");

    const double kappa = std::pow(H, H) * std::pow(1.0 - H, 1.0 - H);
    const double c = m + std::pow(kappa * std::sqrt(-2.0 * std::log(eps)), 1.0 / H) * std::pow(a, 1.0 / (2.0 * H)) *
                             std::pow(m, 1.0 / (2.0 * H)) * std::pow(x, -(1.0 - H) / H);
    const double safety = delta_h ? 1.0 + gamma * std::max(0.0, *delta_h) : 1.0;
    return c * safety;
}

Forecast forecast_util(std::span<const UtilSample> history, double alpha) {
    if (history.empty()) throw std::invalid_argument("forecast_util: history is empty");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("forecast_util: alpha must lie in (0,1]");
    Forecast f;
    f.level = history.front().u;
    for (std::size_t i = 1; i < history.size(); ++i) {
        const auto& u = history[i].u;
        f.level.cpu = alpha * u.cpu + (1.0 - alpha) * f.level.cpu;
        f.level.mem = alpha * u.mem + (1.0 - alpha) * f.level.mem;
        f.level.disk = alpha * u.disk + (1.0 - alpha) * f.level.disk;
    }
    f.u = {clamp01(f.level.cpu), clamp01(f.level.mem), clamp01(f.level.disk)};
    return f;
}

std::vector<double> proportional_weights(std::span<const double> headroom) {
    if (headroom.empty()) throw std::invalid_argument("proportional_weights: no servers");
    std::vector<double> w(headroom.begin(), headroom.end());
    for (double& v : w) v = std::max(0.0, v);
    normalize_row(w);
    return w;
}

FlowAssignment compute_assignment(std::span<const ResourceDemand> demands, std::span<const Forecast> forecasts,
                                  std::span<const ServerConfig> servers) {
    if (servers.empty()) throw std::invalid_argument("compute_assignment: no servers");
    if (demands.empty()) throw std::invalid_argument("compute_assignment: no demands");
    if (!forecasts.empty() && forecasts.size() != servers.size())
        throw std::invalid_argument("compute_assignment: one forecast per server required");

    const std::size_t n = servers.size();
    std::vector<double> spare(n, 1.0);  // fraction of each server still free
    for (std::size_t j = 0; j < forecasts.size(); ++j) spare[j] = std::max(0.0, 1.0 - forecasts[j].u.max_component());

    const std::vector<double> forecast_spare = spare;
    FlowAssignment out;
    for (const auto& d : demands) {
        std::vector<double> cap(n), free(n);
        for (std::size_t j = 0; j < n; ++j) {
            cap[j] = servers[j].work_capacity(d.class_id);
            free[j] = spare[j] * cap[j];
        }
        const double free_total = std::accumulate(free.begin(), free.end(), 0.0);
        const double cap_total = std::accumulate(cap.begin(), cap.end(), 0.0);
        const double need = d.effective_bandwidth;

        double forecast_free = 0.0;
        for (std::size_t j = 0; j < n; ++j) forecast_free += forecast_spare[j] * cap[j];

        std::vector<double> row(n), taken(n, 0.0);
        if (forecast_free <= 0.0) {
            row.assign(n, 1.0 / static_cast<double>(n));
        } else if (free_total > 0.0 && need <= free_total) {
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = free[j] / free_total;
                taken[j] = need * row[j];
            }
        } else if (need > 0.0) {
            for (std::size_t j = 0; j < n; ++j) {
                taken[j] = free[j] + (need - free_total) * cap[j] / cap_total;
                row[j] = taken[j] / need;
            }
        } else {
            row = proportional_weights(cap);
        }
        normalize_row(row);
        for (std::size_t j = 0; j < n; ++j) spare[j] = std::max(0.0, spare[j] - taken[j] / cap[j]);
        out.class_ids.push_back(d.class_id);
        out.w.push_back(std::move(row));
    }
    return out;
}

Correction correct_underestimate(const FlowAssignment& assignment, std::span<const ResourceDemand> demands,
                                 const FlowStats& observed, const std::map<int, double>& forecast_intensity,
                                 std::span<const Forecast> forecasts, std::span<const ServerConfig> servers) {
    Correction out;
    out.demands.assign(demands.begin(), demands.end());
    bool any = false;
    for (auto& d : out.demands) {
        double factor = 1.0;
        auto obs = observed.classes.find(d.class_id);
        auto fc = forecast_intensity.find(d.class_id);
        if (obs != observed.classes.end() && fc != forecast_intensity.end() && fc->second > 0.0)
            factor = std::max(1.0, obs->second.lambda_hat / fc->second);
        out.factors[d.class_id] = factor;
        if (factor > 1.0) {
            any = true;
            d.effective_bandwidth *= factor;
        }
    }
    out.assignment = any ? compute_assignment(out.demands, forecasts, servers) : assignment;
    return out;
}

BalanceResult balance_step(std::span<const double> window, const FlowStats& stats, const BalancerState& prior,
                           std::span<const ServerConfig> servers, const BalancerConfig& cfg) {
    if (servers.empty()) throw std::invalid_argument("balance_step: no servers");
    if (cfg.classes.empty()) throw std::invalid_argument("balance_step: no traffic classes configured");
    BalanceResult out;

    const mfa::MfdfaConfig mcfg = cfg.mfdfa ? *cfg.mfdfa : mfa::MfdfaConfig::defaults(window.size());
    try {
        out.spectrum = mfa::mfdfa(window, mcfg);
    } catch (const std::invalid_argument&) {
        // Degenerate window (e.g. constant traffic): keep the last usable spectrum.
        out.spectrum_reused = true;
        if (prior.spectrum) {
            out.spectrum = *prior.spectrum;
        } else {
            std::vector<double> q = mcfg.q_grid;
            out.spectrum = mfa::make_spectrum(q, std::vector<double>(q.size(), 0.5), std::vector<double>(q.size(), 0.0));
        }
    }
    const double H = std::clamp(out.spectrum.H, 0.5, 0.99);

    std::vector<ClassInfo> order = cfg.classes;
    std::stable_sort(order.begin(), order.end(), [](const ClassInfo& l, const ClassInfo& r) {
        return l.priority != r.priority ? l.priority < r.priority : l.class_id < r.class_id;
    });

    int total_buffer = 0;
    for (const auto& s : servers) total_buffer += s.buffer;

    std::vector<ResourceDemand> demands;
    for (const auto& ci : order) {
        ResourceDemand d;
        d.class_id = ci.class_id;
        d.H = H;
        d.delta_h = out.spectrum.delta_h;
        d.safety_factor = 1.0 + cfg.gamma * std::max(0.0, out.spectrum.delta_h);
        ClassStats cs;
        if (auto it = stats.classes.find(ci.class_id); it != stats.classes.end()) cs = it->second;
        double x = total_buffer * ci.mean_size;
        if (auto it = cfg.buffer_work.find(ci.class_id); it != cfg.buffer_work.end()) x = it->second;
        if (!(x > 0.0)) x = ci.mean_size;
        if (cs.mean_rate > 0.0 && cs.variance_coef > 0.0) {
            d.effective_bandwidth =
                effective_bandwidth(cs.mean_rate, cs.variance_coef, H, x, cfg.eps, out.spectrum.delta_h, cfg.gamma);
        } else {
            d.effective_bandwidth = cs.mean_rate * d.safety_factor;
        }
        demands.push_back(d);
    }

    out.forecasts.resize(servers.size());
    for (std::size_t j = 0; j < servers.size(); ++j)
        if (j < stats.util_history.size() && !stats.util_history[j].empty())
            out.forecasts[j] = forecast_util(stats.util_history[j], cfg.alpha);

    const FlowAssignment first = compute_assignment(demands, out.forecasts, servers);
    Correction corr = correct_underestimate(first, demands, stats, prior.intensity_forecast, out.forecasts, servers);
    out.assignment = std::move(corr.assignment);

    out.next.spectrum = out.spectrum;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const int cls = order[i].class_id;
        ClassDecision dec;
        dec.class_id = cls;
        if (auto it = stats.classes.find(cls); it != stats.classes.end()) dec.lambda_hat = it->second.lambda_hat;
        auto fc = prior.intensity_forecast.find(cls);
        dec.lambda_forecast = fc == prior.intensity_forecast.end() ? 0.0 : fc->second;
        dec.demand = corr.demands[i].effective_bandwidth;
        dec.factor = corr.factors[cls];
        out.classes.push_back(dec);
        out.next.intensity_forecast[cls] = fc == prior.intensity_forecast.end()
                                               ? dec.lambda_hat
                                               : cfg.alpha * dec.lambda_hat + (1.0 - cfg.alpha) * fc->second;
    }
    return out;
}

FlowAssignment initial_assignment(std::span<const int> class_ids, std::span<const ServerConfig> servers) {
    if (servers.empty()) throw std::invalid_argument("initial_assignment: no servers");
    FlowAssignment out;
    for (int cls : class_ids) {
        std::vector<double> row(servers.size());
        for (std::size_t j = 0; j < servers.size(); ++j) row[j] = servers[j].work_capacity(cls);
        normalize_row(row);
        out.class_ids.push_back(cls);
        out.w.push_back(std::move(row));
    }
    return out;
}

std::size_t sample_weighted(std::span<const double> row, Rng& rng) {
    if (row.empty()) throw std::invalid_argument("sample_weighted: empty row");
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (!(total > 0.0)) throw std::invalid_argument("sample_weighted: weights sum to zero");
    std::uniform_real_distribution<double> unif(0.0, total);
    const double u = unif(rng);
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] <= 0.0) continue;
        acc += row[j];
        last = j;
        if (u < acc) return j;
    }
    return last;
}

std::optional<Baseline> parse_baseline(std::string_view name) {
    if (name == "round_robin") return Baseline::round_robin;
    if (name == "least_loaded") return Baseline::least_loaded;
    if (name == "weighted_random") return Baseline::weighted_random;
    return std::nullopt;
}

std::string_view to_string(Baseline kind) {
    switch (kind) {
        case Baseline::round_robin: return "round_robin";
        case Baseline::least_loaded: return "least_loaded";
        case Baseline::weighted_random: return "weighted_random";
    }
    return "unknown";
}

BaselineRouter::BaselineRouter(Baseline kind, std::vector<ServerConfig> servers)
    : kind_(kind), servers_(std::move(servers)) {
    if (servers_.empty()) throw std::invalid_argument("baseline router needs at least one server");
}

int BaselineRouter::route(const traffic::Packet& pkt, std::span<const double> current_load, Rng& rng) {
    switch (kind_) {
        case Baseline::round_robin: {
            std::size_t& next = next_[pkt.class_id];
            const std::size_t j = next % servers_.size();
            next = j + 1;
            return servers_[j].id;
        }
        case Baseline::least_loaded: {
            if (current_load.size() != servers_.size())
                throw std::invalid_argument("least_loaded needs one load value per server");
            std::size_t best = 0;
            for (std::size_t j = 1; j < current_load.size(); ++j)
                if (current_load[j] < current_load[best]) best = j;
            return servers_[best].id;
        }
        case Baseline::weighted_random: {
            std::vector<double> w(servers_.size());
            for (std::size_t j = 0; j < servers_.size(); ++j) w[j] = servers_[j].work_capacity(pkt.class_id);
            return servers_[sample_weighted(w, rng)].id;
        }
    }
    throw std::logic_error("unhandled baseline");
}

int BaselineRouter::route(const traffic::Packet& pkt, const qsim::Simulator& sim, Rng& rng) {
    std::vector<double> load;
    if (kind_ == Baseline::least_loaded) {
        load.resize(servers_.size());
        for (std::size_t j = 0; j < servers_.size(); ++j)
            load[j] = qsim::current_utilization(sim.state(j), sim.servers()[j], pkt.arrival_time).max_component();
    }
    return route(pkt, load, rng);
}

void write_window_log_csv(std::ostream& out, std::span<const WindowLogRow> rows, std::size_t n_servers) {
    out << "window_start,H,delta_h,class,lambda_hat,C,factor";
    for (std::size_t j = 1; j <= n_servers; ++j) out << ",w_" << j;
    out << '\n';
    for (const auto& r : rows) {
        out << r.window_start << ',' << detail::fmt_double(r.H) << ',' << detail::fmt_double(r.delta_h) << ','
            << r.class_id << ',' << detail::fmt_double(r.lambda_hat) << ',' << detail::fmt_double(r.C) << ','
            << detail::fmt_double(r.factor);
        for (double w : r.w) out << ',' << detail::fmt_double(w);
        out << '\n';
    }
}

}  // namespace mflb::balancer

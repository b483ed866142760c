#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "mflb/harness.hpp"
#include "mflb/rng.hpp"
#include "text_format.hpp"

namespace mflb::harness {

using json = nlohmann::json;

namespace {

traffic::TimeSeries rate_series(const FlowConfig& f, std::size_t n_slots, double dt, std::uint64_t seed) {
    switch (f.model) {
        case TrafficModel::constant:
            return traffic::TimeSeries{{1.0}, dt};
        case TrafficModel::fgn: {
            auto noise = traffic::gen_fgn(f.spec.hurst, std::max<std::size_t>(n_slots, 2), f.sigma, seed, dt);
            for (double& v : noise.values) v += 1.0;
            return traffic::clip_nonnegative(std::move(noise));
        }
        case TrafficModel::cascade: {
            int depth = 1;
            while ((std::size_t{1} << depth) < n_slots) ++depth;
            auto c = traffic::gen_binomial_cascade(f.spec.cascade_weight, depth, f.randomize, seed);
            c.values.resize(std::max<std::size_t>(n_slots, 1));
            c.dt = dt;
            return c;
        }
    }
    throw std::logic_error("unhandled traffic model");
}

// Tracks the resource draw per server while replaying a trace.
struct ReplayServer {
    qsim::Resources rate;
    qsim::Resources integral;
    double last = 0.0;
    std::unordered_map<std::uint64_t, int> present;
    std::unordered_map<std::uint64_t, int> serving;

    void advance(double t) {
        const double dt = t - last;
        if (dt > 0.0) integral += qsim::Resources{rate.cpu * dt, rate.mem * dt, rate.disk * dt};
        last = std::max(last, t);
    }
};

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

double jain_index(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("jain_index: empty input");
    double sum = 0.0, sq = 0.0;
    for (double v : x) {
        if (v < 0.0) throw std::invalid_argument("jain_index: negative input");
        sum += v;
        sq += v * v;
    }
    if (sq == 0.0) return 1.0;
    return sum * sum / (static_cast<double>(x.size()) * sq);
}

std::optional<double> nearest_rank(std::vector<double> values, double p) {
    if (values.empty()) return std::nullopt;
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

MetricsReport metrics_from_trace(const qsim::Trace& trace, std::span<const qsim::ServerConfig> servers,
                                 double duration, std::uint64_t windows) {
    if (!(duration > 0.0)) throw std::invalid_argument("metrics_from_trace: duration must be > 0");
    MetricsReport m;
    std::map<int, std::uint64_t> arrivals, lost;
    std::unordered_map<std::uint64_t, double> arrived_at;
    std::vector<double> response;
    std::vector<ReplayServer> replay(servers.size());
    std::unordered_map<int, std::size_t> index;
    for (std::size_t j = 0; j < servers.size(); ++j) {
        index[servers[j].id] = j;
        for (const auto& [cls, mu] : servers[j].service_rate) arrivals[cls];
    }
    const bool drop_ejected = trace.displaced_fate == qsim::DisplacedFate::drop;

    auto draw = [&](std::size_t j, int cls, bool cpu, double sign) {
        const auto& cfg = servers[j];
        const auto d = cfg.demand_for(cls);
        const double mu = cfg.rate_for(cls);
        if (cpu) {
            replay[j].rate.cpu += sign * d.cpu * mu;
        } else {
            replay[j].rate.mem += sign * d.mem * mu;
            replay[j].rate.disk += sign * d.disk * mu;
        }
    };
    auto leave = [&](std::size_t j, std::uint64_t id) {
        auto& r = replay[j];
        if (auto it = r.serving.find(id); it != r.serving.end()) {
            draw(j, it->second, true, -1.0);
            r.serving.erase(it);
        }
        if (auto it = r.present.find(id); it != r.present.end()) {
            draw(j, it->second, false, -1.0);
            r.present.erase(it);
        }
        if (r.present.empty()) r.rate = {};
    };

    for (const auto& ev : trace.events) {
        if (ev.kind == qsim::EventKind::horizon) {
            for (auto& r : replay) r.advance(ev.time);
            continue;
        }
        auto it = index.find(ev.server_id);
        if (it == index.end()) throw std::invalid_argument("metrics_from_trace: unknown server id " + std::to_string(ev.server_id));
        const std::size_t j = it->second;
        replay[j].advance(ev.time);
        switch (ev.kind) {
            case qsim::EventKind::arrival:
                ++arrivals[ev.class_id];
                arrived_at[ev.packet_id] = ev.time;
                replay[j].present[ev.packet_id] = ev.class_id;
                draw(j, ev.class_id, false, 1.0);
                break;
            case qsim::EventKind::service_start:
                replay[j].serving[ev.packet_id] = ev.class_id;
                draw(j, ev.class_id, true, 1.0);
                break;
            case qsim::EventKind::preempt:
                if (replay[j].serving.erase(ev.packet_id)) draw(j, ev.class_id, true, -1.0);
                break;
            case qsim::EventKind::departure:
                ++m.departures;
                if (auto a = arrived_at.find(ev.packet_id); a != arrived_at.end()) {
                    response.push_back(ev.time - a->second);
                    arrived_at.erase(a);
                }
                leave(j, ev.packet_id);
                break;
            case qsim::EventKind::eject:
                if (drop_ejected) {
                    ++lost[ev.class_id];
                    arrived_at.erase(ev.packet_id);
                    leave(j, ev.packet_id);
                }
                break;
            case qsim::EventKind::loss_full:
            case qsim::EventKind::loss_expired:
                ++lost[ev.class_id];
                arrived_at.erase(ev.packet_id);
                leave(j, ev.packet_id);
                break;
            default:
                break;
        }
    }

    std::uint64_t total_arrivals = 0, total_lost = 0;
    for (const auto& [cls, n] : arrivals) {
        m.loss[cls] = n ? static_cast<double>(lost[cls]) / static_cast<double>(n) : 0.0;
        total_arrivals += n;
        total_lost += lost[cls];
    }
    m.arrivals = total_arrivals;
    m.total_loss = total_arrivals ? static_cast<double>(total_lost) / static_cast<double>(total_arrivals) : 0.0;
    m.throughput = static_cast<double>(m.departures) / duration;
    m.response_p50 = nearest_rank(response, 0.50);
    m.response_p95 = nearest_rank(response, 0.95);
    m.response_p99 = nearest_rank(response, 0.99);

    std::vector<double> load;
    for (std::size_t j = 0; j < servers.size(); ++j) {
        const auto& cap = servers[j].capacity;
        const auto& in = replay[j].integral;
        qsim::Resources u{std::clamp(in.cpu / duration / cap.cpu, 0.0, 1.0),
                          std::clamp(in.mem / duration / cap.mem, 0.0, 1.0),
                          std::clamp(in.disk / duration / cap.disk, 0.0, 1.0)};
        m.utilization[servers[j].id] = u;
        load.push_back(u.max_component());
    }
    m.jain = jain_index(load);
    m.control_overhead = windows * servers.size();
    return m;
}

Traffic generate_traffic(const Scenario& s) {
    s.validate();
    const auto n_slots = static_cast<std::size_t>(std::ceil(s.duration / s.dt));
    std::vector<traffic::PacketStream> streams;
    for (std::size_t i = 0; i < s.flows.size(); ++i) {
        const auto& f = s.flows[i];
        const std::uint64_t series_seed = splitmix64(s.seed ^ splitmix64(stream::traffic_base + 2 * i));
        const std::uint64_t arrival_seed = splitmix64(s.seed ^ splitmix64(stream::traffic_base + 2 * i + 1));
        const auto series = rate_series(f, n_slots, s.dt, series_seed);
        streams.push_back(traffic::gen_arrivals(series, f.spec, s.duration, arrival_seed, f.rate_changes));
    }
    Traffic out;
    out.packets = traffic::merge_streams(streams);
    const auto full_slots = static_cast<std::size_t>(std::floor(s.duration / s.dt + 1e-9));
    out.slot_counts.assign(full_slots, 0.0);
    for (const auto& p : out.packets) {
        const auto slot = static_cast<std::size_t>(std::floor(p.arrival_time / s.dt));
        if (slot < full_slots) out.slot_counts[slot] += 1.0;
    }
    return out;
}

RunOutput run_scenario(const Scenario& s) {
    s.validate();
    const Traffic tr = generate_traffic(s);
    RunOutput out;
    out.arrival_digest = traffic::stream_digest(tr.packets);

    const auto class_ids = s.class_ids();
    qsim::Simulator sim(s.servers, s.eject, qsim::SimOptions{s.seed, s.preemptive, true});
    Rng routing_rng = make_stream(s.seed, stream::routing);

    const bool adaptive = s.algorithm == Algorithm::multifractal;
    std::optional<balancer::BaselineRouter> baseline;
    if (!adaptive) {
        const auto kind = balancer::parse_baseline(to_string(s.algorithm));
        baseline.emplace(*kind, s.servers);
    }

    balancer::BalancerConfig bcfg;
    bcfg.alpha = s.alpha;
    bcfg.gamma = s.gamma;
    bcfg.eps = s.eps;
    bcfg.dt = s.dt;
    bcfg.mfdfa = s.mfdfa;
    for (const auto& f : s.flows) bcfg.classes.push_back({f.spec.class_id, f.spec.priority, f.spec.mean_size});

    balancer::FlowAssignment assignment = balancer::initial_assignment(class_ids, s.servers);
    balancer::BalancerState bstate;
    balancer::FlowStats history;

    const auto windows = mfa::sliding_windows(tr.slot_counts, s.window);
    out.window_count = windows.size();
    std::size_t next_window = 0;

    auto close_window = [&](const mfa::WindowSlice& win) {
        const double start = static_cast<double>(win.start) * s.dt;
        const double boundary = static_cast<double>(win.start + s.window.length) * s.dt;
        sim.advance_to(boundary);
        const auto snaps = sim.take_utilization();
        if (!adaptive) return;
        const auto& events = sim.trace().events;
        const auto first = std::lower_bound(events.begin(), events.end(), start,
                                            [](const qsim::TraceEvent& ev, double t) { return ev.time < t; });
        const auto slice = std::span<const qsim::TraceEvent>(events).subspan(
            static_cast<std::size_t>(first - events.begin()));
        history = balancer::collect_stats(slice, class_ids, start, boundary - start, s.dt, snaps, &history);
        auto result = balancer::balance_step(win.values, history, bstate, s.servers, bcfg);
        assignment = result.assignment;
        bstate = result.next;
        for (const auto& dec : result.classes) {
            WindowRecord rec;
            rec.row.window_start = win.start;
            rec.row.H = result.spectrum.H;
            rec.row.delta_h = result.spectrum.delta_h;
            rec.row.class_id = dec.class_id;
            rec.row.lambda_hat = dec.lambda_hat;
            rec.row.C = dec.demand;
            rec.row.factor = dec.factor;
            rec.row.w = assignment.row(dec.class_id);
            rec.lambda_forecast = dec.lambda_forecast;
            rec.spectrum_reused = result.spectrum_reused;
            out.windows.push_back(std::move(rec));
        }
    };

    for (const auto& pkt : tr.packets) {
        if (pkt.arrival_time > s.duration) break;
        while (next_window < windows.size() &&
               static_cast<double>(windows[next_window].start + s.window.length) * s.dt <= pkt.arrival_time)
            close_window(windows[next_window++]);
        int server_id;
        if (adaptive) {
            const auto& row = assignment.row(pkt.class_id);
            server_id = s.servers[balancer::sample_weighted(row, routing_rng)].id;
        } else {
            server_id = baseline->route(pkt, sim, routing_rng);
        }
        sim.arrive(pkt, server_id);
    }
    while (next_window < windows.size()) close_window(windows[next_window++]);
    sim.finish(s.duration);

    out.trace = sim.release_trace();
    out.metrics = metrics_from_trace(out.trace, s.servers, s.duration, adaptive ? out.window_count : 0);
    out.metrics.config_digest = config_digest(s);
    out.metrics.seed = s.seed;
    return out;
}

ComparisonTable compare_algorithms(const Scenario& s, std::span<const Algorithm> algorithms,
                                   std::span<const std::uint64_t> seeds) {
    if (algorithms.size() < 2) throw std::invalid_argument("compare_algorithms needs at least 2 algorithms");
    if (seeds.empty()) throw std::invalid_argument("compare_algorithms needs at least 1 seed");
    ComparisonTable table;
    table.n_seeds = seeds.size();
    for (Algorithm a : algorithms) {
        ComparisonRow row;
        row.algorithm = a;
        table.rows.push_back(std::move(row));
    }
    for (std::uint64_t seed : seeds) {
        for (auto& row : table.rows) {
            Scenario run = s;
            run.algorithm = row.algorithm;
            run.seed = seed;
            auto result = run_scenario(run);
            row.per_seed.push_back(std::move(result.metrics));
            row.arrival_digests.push_back(result.arrival_digest);
        }
    }
    for (std::size_t k = 0; k < seeds.size(); ++k) {
        double best_jain = -1.0, best_loss = 2.0;
        for (const auto& row : table.rows) {
            best_jain = std::max(best_jain, row.per_seed[k].jain);
            best_loss = std::min(best_loss, row.per_seed[k].total_loss);
        }
        for (auto& row : table.rows) {
            if (row.per_seed[k].jain >= best_jain) ++row.jain_wins;
            if (row.per_seed[k].total_loss <= best_loss) ++row.loss_wins;
        }
    }
    for (auto& row : table.rows) {
        std::map<std::string, std::vector<double>> samples;
        for (const auto& m : row.per_seed) {
            samples["throughput"].push_back(m.throughput);
            samples["loss_total"].push_back(m.total_loss);
            for (const auto& [cls, v] : m.loss) samples["loss_class_" + std::to_string(cls)].push_back(v);
            if (m.response_p50) samples["response_p50"].push_back(*m.response_p50);
            if (m.response_p95) samples["response_p95"].push_back(*m.response_p95);
            if (m.response_p99) samples["response_p99"].push_back(*m.response_p99);
            samples["jain"].push_back(m.jain);
            samples["control_overhead"].push_back(static_cast<double>(m.control_overhead));
            for (const auto& [id, u] : m.utilization)
                samples["utilization_server_" + std::to_string(id)].push_back(u.max_component());
        }
        for (const auto& [name, v] : samples) row.metrics[name] = MetricSummary{mean(v), sample_stddev(v), v.size()};
        row.metrics["jain_wins"] = MetricSummary{static_cast<double>(row.jain_wins), 0.0, seeds.size()};
        row.metrics["loss_wins"] = MetricSummary{static_cast<double>(row.loss_wins), 0.0, seeds.size()};
    }
    return table;
}

void write_metrics_json(std::ostream& out, const MetricsReport& m) {
    json doc;
    doc["throughput"] = m.throughput;
    doc["loss"] = json::object();
    for (const auto& [cls, v] : m.loss) doc["loss"][std::to_string(cls)] = v;
    doc["response_p50"] = optional_json(m.response_p50);
    doc["response_p95"] = optional_json(m.response_p95);
    doc["response_p99"] = optional_json(m.response_p99);
    doc["utilization"] = json::object();
    for (const auto& [id, u] : m.utilization) doc["utilization"][std::to_string(id)] = {u.cpu, u.mem, u.disk};
    doc["jain"] = m.jain;
    doc["control_overhead"] = m.control_overhead;
    doc["config_digest"] = m.config_digest;
    doc["seed"] = m.seed;
    out << doc.dump(2) << '\n';
}

void write_comparison_csv(std::ostream& out, const ComparisonTable& table) {
    out << "algorithm,metric,mean,stddev,n_seeds\n";
    for (const auto& row : table.rows) {
        for (const auto& [name, summary] : row.metrics) {
            out << to_string(row.algorithm) << ',' << name << ',' << detail::fmt_double(summary.mean) << ','
                << detail::fmt_double(summary.stddev) << ',' << summary.n << '\n';
        }
    }
}

}  // namespace mflb::harness

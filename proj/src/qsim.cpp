#include "mflb/qsim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "text_format.hpp"

namespace mflb::qsim {

namespace {

void refresh_rates(ServerState& state, const ServerConfig& cfg) {
    for (auto& [cls, r] : state.meter.rate) r = Resources{};
    auto present = [&](const Packet& p, bool serving) {
        const Resources d = cfg.demand_for(p.class_id);
        const double mu = cfg.rate_for(p.class_id);
        Resources& r = state.meter.rate[p.class_id];
        if (serving) r.cpu += d.cpu * mu;
        r.mem += d.mem * mu;
        r.disk += d.disk * mu;
    };
    for (const auto& s : state.in_service) present(s.pkt, true);
    for (const auto& w : state.buffer) present(w.pkt, false);
    for (const auto& w : state.displaced) present(w.pkt, false);
}

TraceEvent make_event(double t, EventKind kind, const Packet& p, const ServerConfig& cfg, const ServerState& state) {
    TraceEvent ev;
    ev.time = t;
    ev.kind = kind;
    ev.packet_id = p.id;
    ev.class_id = p.class_id;
    ev.priority = p.priority;
    ev.server_id = cfg.id;
    ev.queue_len_after = static_cast<int>(state.buffer.size());
    ev.size = p.size;
    return ev;
}

void log_event(EventLog* log, double t, EventKind kind, const Packet& p, const ServerConfig& cfg,
               const ServerState& state) {
    if (log) log->push_back(make_event(t, kind, p, cfg, state));
}

void insert_waiting(ServerState& state, Waiting w) {
    w.seq = state.next_seq++;
    auto pos = std::upper_bound(state.buffer.begin(), state.buffer.end(), w.pkt.priority,
                                [](int prio, const Waiting& x) { return prio < x.pkt.priority; });
    state.buffer.insert(pos, std::move(w));
}

// Displaced victims wait in priority order, first ejected first within a priority.
void push_displaced(ServerState& state, Waiting w) {
    auto pos = std::upper_bound(state.displaced.begin(), state.displaced.end(), w.pkt.priority,
                                [](int prio, const Waiting& x) { return prio < x.pkt.priority; });
    state.displaced.insert(pos, std::move(w));
}

void start_service(ServerState& state, const ServerConfig& cfg, const Packet& pkt, double remaining, double t,
                   EventLog* log) {
    InService s;
    s.pkt = pkt;
    s.remaining = remaining;
    s.started = t;
    s.completion = t + remaining / cfg.rate_for(pkt.class_id);
    state.in_service.push_back(s);
    log_event(log, t, EventKind::service_start, pkt, cfg, state);
}

// Lowest-priority packet in service, latest arrival among ties.
std::size_t worst_in_service(const ServerState& state) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < state.in_service.size(); ++i) {
        const auto& a = state.in_service[i].pkt;
        const auto& b = state.in_service[best].pkt;
        if (a.priority > b.priority ||
            (a.priority == b.priority && (a.arrival_time > b.arrival_time ||
                                          (a.arrival_time == b.arrival_time && a.id > b.id))))
            best = i;
    }
    return best;
}

Waiting pull_from_service(ServerState& state, const ServerConfig& cfg, std::size_t slot, double t) {
    const InService s = state.in_service[slot];
    state.in_service.erase(state.in_service.begin() + static_cast<std::ptrdiff_t>(slot));
    const double done = (t - s.started) * cfg.rate_for(s.pkt.class_id);
    Waiting w;
    w.pkt = s.pkt;
    w.remaining = std::max(0.0, s.remaining - done);
    return w;
}

}  // namespace

double Resources::max_component() const { return std::max({cpu, mem, disk}); }

Resources& Resources::operator+=(const Resources& o) {
    cpu += o.cpu;
    mem += o.mem;
    disk += o.disk;
    return *this;
}

double ServerConfig::rate_for(int class_id) const {
    auto it = service_rate.find(class_id);
    if (it == service_rate.end())
        throw std::out_of_range("server " + std::to_string(id) + " has no service rate for class " +
                                std::to_string(class_id));
    return it->second;
}

Resources ServerConfig::demand_for(int class_id) const {
    auto it = demand_per_work.find(class_id);
    return it == demand_per_work.end() ? Resources{1.0, 1.0, 1.0} : it->second;
}

void ServerConfig::validate() const {
    const std::string who = "server " + std::to_string(id) + ": ";
    if (channels < 1) throw std::invalid_argument(who + "channels must be >= 1");
    if (buffer < 0) throw std::invalid_argument(who + "buffer must be >= 0");
    if (service_rate.empty()) throw std::invalid_argument(who + "needs at least one service rate");
    for (const auto& [cls, mu] : service_rate)
        if (!(mu > 0.0) || !std::isfinite(mu)) throw std::invalid_argument(who + "service rates must be > 0");
    if (!(capacity.cpu > 0.0 && capacity.mem > 0.0 && capacity.disk > 0.0))
        throw std::invalid_argument(who + "capacities must be > 0");
    for (const auto& [cls, d] : demand_per_work)
        if (d.cpu < 0.0 || d.mem < 0.0 || d.disk < 0.0) throw std::invalid_argument(who + "demands must be >= 0");
}

void EjectPolicy::validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("eject beta must lie in [0,1]");
}

std::string_view to_string(EventKind kind) {
    switch (kind) {
        case EventKind::arrival: return "arrival";
        case EventKind::service_start: return "service_start";
        case EventKind::preempt: return "preempt";
        case EventKind::departure: return "departure";
        case EventKind::eject: return "eject";
        case EventKind::loss_full: return "loss_full";
        case EventKind::loss_expired: return "loss_expired";
        case EventKind::horizon: return "horizon";
    }
    return "unknown";
}

void UsageMeter::advance(double t, std::size_t in_system) {
    const double dt = t - last_time;
    if (dt > 0.0) {
        for (const auto& [cls, r] : rate) {
            Resources inc{r.cpu * dt, r.mem * dt, r.disk * dt};
            integral[cls] += inc;
            total_integral[cls] += inc;
        }
        occupancy_area += static_cast<double>(in_system) * dt;
    }
    last_time = std::max(last_time, t);
}

std::optional<std::size_t> select_victim(std::span<const Waiting> buffer, int arriving_priority) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        const auto& w = buffer[i];
        if (w.pkt.priority <= arriving_priority) continue;
        if (!best || w.pkt.priority > buffer[*best].pkt.priority ||
            (w.pkt.priority == buffer[*best].pkt.priority && w.seq > buffer[*best].seq))
            best = i;
    }
    return best;
}

AdmissionOutcome admit(ServerState& state, const ServerConfig& cfg, const Packet& pkt, const EjectPolicy& policy,
                       double t, Rng& rng, bool preemptive, EventLog* log) {
    AdmissionOutcome out;
    const auto capacity = static_cast<std::size_t>(cfg.buffer);

    if (state.in_service.size() < static_cast<std::size_t>(cfg.channels)) {
        start_service(state, cfg, pkt, pkt.size, t, log);
        out.kind = Admission::served_now;
    } else if (preemptive && state.in_service[worst_in_service(state)].pkt.priority > pkt.priority) {
        Waiting bumped = pull_from_service(state, cfg, worst_in_service(state), t);
        out.preempted = bumped.pkt.id;
        if (state.buffer.size() < capacity) {
            const Packet p = bumped.pkt;
            insert_waiting(state, std::move(bumped));
            log_event(log, t, EventKind::preempt, p, cfg, state);
        } else {
            // No storage left: the displaced packet leaves the system.
            log_event(log, t, EventKind::preempt, bumped.pkt, cfg, state);
            log_event(log, t, EventKind::loss_full, bumped.pkt, cfg, state);
        }
        start_service(state, cfg, pkt, pkt.size, t, log);
        out.kind = Admission::served_now;
    } else if (state.buffer.size() < capacity) {
        insert_waiting(state, Waiting{pkt, pkt.size, 0});
        out.kind = Admission::queued;
    } else {
        const auto victim = select_victim(state.buffer, pkt.priority);
        bool eject = false;
        if (victim) {
            if (policy.beta >= 1.0) {
                eject = true;
            } else if (policy.beta > 0.0) {
                std::uniform_real_distribution<double> unif(0.0, 1.0);
                eject = unif(rng) < policy.beta;
            }
        }
        if (eject) {
            Waiting v = state.buffer[*victim];
            state.buffer.erase(state.buffer.begin() + static_cast<std::ptrdiff_t>(*victim));
            log_event(log, t, EventKind::eject, v.pkt, cfg, state);
            out.victim = v.pkt.id;
            if (policy.displaced_fate == DisplacedFate::requeue) push_displaced(state, std::move(v));
            insert_waiting(state, Waiting{pkt, pkt.size, 0});
            out.kind = Admission::queued_after_eject;
        } else {
            log_event(log, t, EventKind::loss_full, pkt, cfg, state);
            out.kind = Admission::lost_full;
        }
    }
    refresh_rates(state, cfg);
    return out;
}

std::vector<TraceEvent> expire(ServerState& state, const ServerConfig& cfg, double t) {
    std::vector<TraceEvent> events;
    for (auto it = state.buffer.begin(); it != state.buffer.end();) {
        if (it->pkt.expiry_time <= t) {
            const Packet p = it->pkt;
            it = state.buffer.erase(it);
            events.push_back(make_event(t, EventKind::loss_expired, p, cfg, state));
        } else {
            ++it;
        }
    }
    for (auto it = state.displaced.begin(); it != state.displaced.end();) {
        if (it->pkt.expiry_time <= t) {
            const Packet p = it->pkt;
            it = state.displaced.erase(it);
            events.push_back(make_event(t, EventKind::loss_expired, p, cfg, state));
        } else {
            ++it;
        }
    }
    if (!events.empty()) refresh_rates(state, cfg);
    return events;
}

Utilization utilization(const ServerState& state, const ServerConfig& cfg, double window) {
    if (!(window > 0.0)) throw std::invalid_argument("utilization window must be > 0");
    Utilization u;
    for (const auto& [cls, integral] : state.meter.integral) {
        Resources r{integral.cpu / window / cfg.capacity.cpu, integral.mem / window / cfg.capacity.mem,
                    integral.disk / window / cfg.capacity.disk};
        u.per_class[cls] = r;
        u.total += r;
    }
    u.total.cpu = std::clamp(u.total.cpu, 0.0, 1.0);
    u.total.mem = std::clamp(u.total.mem, 0.0, 1.0);
    u.total.disk = std::clamp(u.total.disk, 0.0, 1.0);
    return u;
}

Resources instantaneous_load(const ServerState& state, const ServerConfig& cfg) {
    Resources total;
    for (const auto& [cls, r] : state.meter.rate) total += r;
    return {total.cpu / cfg.capacity.cpu, total.mem / cfg.capacity.mem, total.disk / cfg.capacity.disk};
}

Resources current_utilization(const ServerState& state, const ServerConfig& cfg, double t) {
    const double span = t - state.meter.window_start;
    if (!(span > 0.0)) return instantaneous_load(state, cfg);
    const double pending = std::max(0.0, t - state.meter.last_time);
    Resources total;
    for (const auto& [cls, integral] : state.meter.integral) total += integral;
    for (const auto& [cls, r] : state.meter.rate) total += Resources{r.cpu * pending, r.mem * pending, r.disk * pending};
    return {total.cpu / span / cfg.capacity.cpu, total.mem / span / cfg.capacity.mem,
            total.disk / span / cfg.capacity.disk};
}

Simulator::Simulator(std::vector<ServerConfig> servers, EjectPolicy policy, SimOptions options)
    : servers_(std::move(servers)), policy_(policy), options_(options) {
    if (servers_.empty()) throw std::invalid_argument("simulator needs at least one server");
    policy_.validate();
    for (std::size_t i = 0; i < servers_.size(); ++i) {
        servers_[i].validate();
        for (std::size_t k = 0; k < i; ++k)
            if (servers_[k].id == servers_[i].id)
                throw std::invalid_argument("duplicate server id " + std::to_string(servers_[i].id));
    }
    states_.resize(servers_.size());
    counts_.resize(servers_.size());
    for (std::size_t i = 0; i < servers_.size(); ++i) rngs_.push_back(make_stream(options_.seed, stream::server_base + i));
    trace_.displaced_fate = policy_.displaced_fate;
}

std::size_t Simulator::server_index(int server_id) const {
    for (std::size_t i = 0; i < servers_.size(); ++i)
        if (servers_[i].id == server_id) return i;
    throw std::out_of_range("unknown server id " + std::to_string(server_id));
}

std::optional<Simulator::Departure> Simulator::next_departure() const {
    std::optional<Departure> best;
    for (std::size_t j = 0; j < states_.size(); ++j) {
        const auto& slots = states_[j].in_service;
        for (std::size_t k = 0; k < slots.size(); ++k)
            if (!best || slots[k].completion < best->time) best = Departure{slots[k].completion, j, k};
    }
    return best;
}

void Simulator::tally(std::size_t server, const TraceEvent& ev) {
    auto& c = counts_[server][ev.class_id];
    switch (ev.kind) {
        case EventKind::arrival: ++c.arrivals; break;
        case EventKind::departure: ++c.departures; break;
        case EventKind::loss_full: ++c.loss_full; break;
        case EventKind::loss_expired: ++c.loss_expired; break;
        case EventKind::eject:
            ++c.ejects;
            if (policy_.displaced_fate == DisplacedFate::drop) ++c.eject_drops;
            break;
        case EventKind::preempt: ++c.preempts; break;
        default: break;
    }
}

void Simulator::record(const TraceEvent& ev) {
    if (ev.server_id >= 0) tally(server_index(ev.server_id), ev);
    if (options_.record_trace) trace_.events.push_back(ev);
}

void Simulator::expire_server(std::size_t j, double t) {
    for (const auto& ev : expire(states_[j], servers_[j], t)) record(ev);
}

void Simulator::dispatch(std::size_t j, double t) {
    auto& st = states_[j];
    const auto& cfg = servers_[j];
    const auto capacity = static_cast<std::size_t>(cfg.buffer);
    scratch_.clear();
    for (;;) {
        while (!st.displaced.empty() && st.buffer.size() < capacity) {
            Waiting w = std::move(st.displaced.front());
            st.displaced.pop_front();
            insert_waiting(st, std::move(w));
        }
        // Next packet to serve: the buffer head, unless a displaced packet outranks it.
        const bool from_displaced =
            !st.displaced.empty() &&
            (st.buffer.empty() || st.displaced.front().pkt.priority < st.buffer.front().pkt.priority);
        if (!from_displaced && st.buffer.empty()) break;
        auto take_next = [&] {
            Waiting head;
            if (from_displaced) {
                head = std::move(st.displaced.front());
                st.displaced.pop_front();
            } else {
                head = std::move(st.buffer.front());
                st.buffer.erase(st.buffer.begin());
            }
            return head;
        };
        const int next_priority = from_displaced ? st.displaced.front().pkt.priority : st.buffer.front().pkt.priority;
        if (st.in_service.size() < static_cast<std::size_t>(cfg.channels)) {
            const Waiting head = take_next();
            start_service(st, cfg, head.pkt, head.remaining, t, &scratch_);
            continue;
        }
        if (options_.preemptive) {
            const std::size_t worst = worst_in_service(st);
            if (next_priority < st.in_service[worst].pkt.priority) {
                const Waiting head = take_next();
                Waiting bumped = pull_from_service(st, cfg, worst, t);
                const Packet p = bumped.pkt;
                insert_waiting(st, std::move(bumped));
                if (st.buffer.size() > capacity) {
                    push_displaced(st, std::move(st.buffer.back()));
                    st.buffer.pop_back();
                }
                scratch_.push_back(make_event(t, EventKind::preempt, p, cfg, st));
                start_service(st, cfg, head.pkt, head.remaining, t, &scratch_);
                continue;
            }
        }
        break;
    }
    refresh_rates(st, cfg);
    for (const auto& ev : scratch_) record(ev);
    scratch_.clear();
}

void Simulator::handle_departure(const Departure& dep) {
    auto& st = states_[dep.server];
    const auto& cfg = servers_[dep.server];
    st.meter.advance(dep.time, st.in_system());
    expire_server(dep.server, dep.time);
    const Packet p = st.in_service[dep.slot].pkt;
    st.in_service.erase(st.in_service.begin() + static_cast<std::ptrdiff_t>(dep.slot));
    refresh_rates(st, cfg);
    record(make_event(dep.time, EventKind::departure, p, cfg, st));
    dispatch(dep.server, dep.time);
}

void Simulator::advance_to(double t) {
    if (finished_) throw std::logic_error("simulator already finished");
    while (auto dep = next_departure()) {
        if (dep->time > t) break;
        now_ = std::max(now_, dep->time);
        handle_departure(*dep);
    }
    now_ = std::max(now_, t);
}

AdmissionOutcome Simulator::arrive(const Packet& pkt, int server_id) {
    const std::size_t j = server_index(server_id);
    if (pkt.arrival_time < now_) throw std::invalid_argument("arrivals must be delivered in time order");
    advance_to(pkt.arrival_time);
    const double t = pkt.arrival_time;
    auto& st = states_[j];
    const auto& cfg = servers_[j];
    st.meter.advance(t, st.in_system());
    expire_server(j, t);
    record(make_event(t, EventKind::arrival, pkt, cfg, st));
    scratch_.clear();
    const auto outcome = admit(st, cfg, pkt, policy_, t, rngs_[j], options_.preemptive, &scratch_);
    EventLog admitted;
    admitted.swap(scratch_);
    for (const auto& ev : admitted) record(ev);
    dispatch(j, t);
    return outcome;
}

std::vector<Utilization> Simulator::take_utilization() {
    std::vector<Utilization> out;
    out.reserve(states_.size());
    for (std::size_t j = 0; j < states_.size(); ++j) {
        auto& st = states_[j];
        st.meter.advance(now_, st.in_system());
        const double window = now_ - st.meter.window_start;
        out.push_back(window > 0.0 ? utilization(st, servers_[j], window) : Utilization{});
        st.meter.integral.clear();
        st.meter.window_start = now_;
    }
    return out;
}

void Simulator::finish(double horizon) {
    advance_to(horizon);
    for (auto& st : states_) st.meter.advance(now_, st.in_system());
    TraceEvent marker;
    marker.time = now_;
    marker.kind = EventKind::horizon;
    marker.server_id = -1;
    record(marker);
    trace_.horizon = now_;
    finished_ = true;
}

std::vector<ServerCounters> Simulator::counters() const {
    std::vector<ServerCounters> out(states_.size());
    for (std::size_t j = 0; j < states_.size(); ++j) {
        out[j].per_class = counts_[j];
        out[j].occupancy_area = states_[j].meter.occupancy_area;
        out[j].in_system_at_end = states_[j].in_system();
    }
    return out;
}

RunResult run(const std::vector<ServerConfig>& servers, std::span<const Packet> arrivals, const RoutingFn& routing,
              const EjectPolicy& policy, double horizon, std::uint64_t seed, bool preemptive, bool record_trace) {
    if (!(horizon > 0.0)) throw std::invalid_argument("run: horizon must be > 0");
    Simulator sim(servers, policy, SimOptions{seed, preemptive, record_trace});
    Rng routing_rng = make_stream(seed, stream::routing);
    for (const auto& pkt : arrivals) {
        if (pkt.arrival_time > horizon) break;
        sim.arrive(pkt, routing(pkt, sim, routing_rng));
    }
    sim.finish(horizon);
    RunResult out;
    out.counters = sim.counters();
    out.trace = sim.release_trace();
    return out;
}

void write_trace_csv(std::ostream& out, const Trace& trace) {
    out << "time,kind,packet_id,class,priority,server,queue_len_after\n";
    for (const auto& ev : trace.events) {
        out << detail::fmt_double(ev.time) << ',' << to_string(ev.kind) << ',' << ev.packet_id << ',' << ev.class_id
            << ',' << ev.priority << ',' << ev.server_id << ',' << ev.queue_len_after << '\n';
    }
}

}  // namespace mflb::qsim

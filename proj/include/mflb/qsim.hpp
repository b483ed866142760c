#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mflb/rng.hpp"
#include "mflb/traffic.hpp"

namespace mflb::qsim {

using traffic::Packet;

/// CPU, memory and disk quantities.
struct Resources {
    double cpu = 0.0;
    double mem = 0.0;
    double disk = 0.0;

    double max_component() const;
    Resources& operator+=(const Resources& o);
};

struct ServerConfig {
    int id = 1;
    int channels = 1;  // c
    int buffer = 0;    // K waiting places, in-service positions excluded
    std::map<int, double> service_rate;  // class -> work units per second
    Resources capacity{1.0, 1.0, 1.0};
    std::map<int, Resources> demand_per_work;  // class -> resource units per work unit

    /// Throws std::out_of_range for a class without a configured rate.
    double rate_for(int class_id) const;
    /// Classes without an explicit demand use (1, 1, 1).
    Resources demand_for(int class_id) const;
    /// c * mu[class].
    double work_capacity(int class_id) const { return channels * rate_for(class_id); }
    void validate() const;
};

enum class DisplacedFate { requeue, drop };

struct EjectPolicy {
    double beta = 1.0;
    DisplacedFate displaced_fate = DisplacedFate::requeue;

    void validate() const;
};

enum class EventKind { arrival, service_start, preempt, departure, eject, loss_full, loss_expired, horizon };

std::string_view to_string(EventKind kind);

struct TraceEvent {
    double time = 0.0;
    EventKind kind = EventKind::arrival;
    std::uint64_t packet_id = 0;
    int class_id = 0;
    int priority = 0;
    int server_id = 0;
    int queue_len_after = 0;
    double size = 0.0;  // packet work; not part of the CSV export
};

/// Complete record of one run. The last event is the `horizon` marker
/// (packet_id 0, class 0, server -1).
struct Trace {
    std::vector<TraceEvent> events;
    double horizon = 0.0;
    DisplacedFate displaced_fate = DisplacedFate::requeue;
};

struct InService {
    Packet pkt;
    double remaining = 0.0;  // work left at `started`
    double started = 0.0;
    double completion = 0.0;
};

struct Waiting {
    Packet pkt;
    double remaining = 0.0;
    std::uint64_t seq = 0;  // order of entry into the waiting area
};

/// Integrates per-class resource draw and the number in system over time.
/// CPU is drawn by in-service packets; memory and disk by every packet present.
struct UsageMeter {
    double last_time = 0.0;
    double window_start = 0.0;
    std::map<int, Resources> rate;      // current draw per class
    std::map<int, Resources> integral;  // since window_start
    std::map<int, Resources> total_integral;
    double occupancy_area = 0.0;  // integral of number in system over the run

    void advance(double t, std::size_t in_system);
};

struct ServerState {
    std::vector<InService> in_service;
    std::vector<Waiting> buffer;  // ordered by (priority, seq)
    std::deque<Waiting> displaced;  // requeued victims waiting for a buffer place
    UsageMeter meter;
    std::uint64_t next_seq = 0;

    std::size_t in_system() const { return in_service.size() + buffer.size() + displaced.size(); }
};

enum class Admission { served_now, queued, queued_after_eject, lost_full };

struct AdmissionOutcome {
    Admission kind = Admission::served_now;
    std::optional<std::uint64_t> victim;     // ejected buffered packet
    std::optional<std::uint64_t> preempted;  // packet pushed out of service
};

using EventLog = std::vector<TraceEvent>;

/// Index into `buffer` of the packet with the numerically largest priority
/// strictly greater than `arriving_priority`, latest entry first among ties.
std::optional<std::size_t> select_victim(std::span<const Waiting> buffer, int arriving_priority);

/// Admission of `pkt` at time t (pkt.arrival_time). Appends the resulting
/// trace events (other than the arrival itself) to `log` when non-null.
AdmissionOutcome admit(ServerState& state, const ServerConfig& cfg, const Packet& pkt, const EjectPolicy& policy,
                       double t, Rng& rng, bool preemptive = true, EventLog* log = nullptr);

/// Removes waiting packets with expiry_time <= t. In-service packets never expire.
std::vector<TraceEvent> expire(ServerState& state, const ServerConfig& cfg, double t);

struct Utilization {
    Resources total;  // clamped to [0, 1]
    std::map<int, Resources> per_class;  // unclamped class contributions
};

/// Time-averaged resource draw over the meter's current window divided by capacity.
Utilization utilization(const ServerState& state, const ServerConfig& cfg, double window);

/// Instantaneous draw relative to capacity, unclamped.
Resources instantaneous_load(const ServerState& state, const ServerConfig& cfg);

/// Mean draw relative to capacity over the open utilization window up to t,
/// unclamped; the instantaneous load when the window has no length yet.
Resources current_utilization(const ServerState& state, const ServerConfig& cfg, double t);

struct ClassCounters {
    std::uint64_t arrivals = 0;
    std::uint64_t departures = 0;
    std::uint64_t loss_full = 0;
    std::uint64_t loss_expired = 0;
    std::uint64_t eject_drops = 0;
    std::uint64_t ejects = 0;
    std::uint64_t preempts = 0;
};

struct ServerCounters {
    std::map<int, ClassCounters> per_class;
    double occupancy_area = 0.0;
    std::uint64_t in_system_at_end = 0;
};

struct SimOptions {
    std::uint64_t seed = 0;
    bool preemptive = true;
    bool record_trace = true;
};

/// Event-driven multi-server engine. Arrivals must be fed in time order;
/// departures scheduled inside the engine are processed first whenever they
/// precede (or coincide with) the next arrival.
class Simulator {
public:
    Simulator(std::vector<ServerConfig> servers, EjectPolicy policy, SimOptions options);

    const std::vector<ServerConfig>& servers() const { return servers_; }
    const ServerState& state(std::size_t index) const { return states_.at(index); }
    std::size_t server_index(int server_id) const;  // throws std::out_of_range
    double now() const { return now_; }

    /// Processes every internal event up to and including time t.
    void advance_to(double t);
    /// Delivers an arrival to the server with the given id.
    AdmissionOutcome arrive(const Packet& pkt, int server_id);
    /// Utilization of every server since the previous call (or run start), then starts a new window.
    std::vector<Utilization> take_utilization();
    /// Advances to the horizon and appends the horizon marker.
    void finish(double horizon);

    const Trace& trace() const { return trace_; }
    Trace release_trace() { return std::move(trace_); }
    std::vector<ServerCounters> counters() const;

private:
    struct Departure {
        double time;
        std::size_t server;
        std::size_t slot;
    };
    std::optional<Departure> next_departure() const;
    void handle_departure(const Departure& dep);
    void dispatch(std::size_t server, double t);
    void expire_server(std::size_t server, double t);
    void record(const TraceEvent& ev);
    void tally(std::size_t server, const TraceEvent& ev);

    std::vector<ServerConfig> servers_;
    std::vector<ServerState> states_;
    std::vector<Rng> rngs_;
    std::vector<std::map<int, ClassCounters>> counts_;
    EjectPolicy policy_;
    SimOptions options_;
    Trace trace_;
    EventLog scratch_;
    double now_ = 0.0;
    bool finished_ = false;
};

/// Routing callback: returns a server id for the packet.
using RoutingFn = std::function<int(const Packet&, const Simulator&, Rng&)>;

struct RunResult {
    Trace trace;
    std::vector<ServerCounters> counters;
};

/// Feeds a time-ordered stream through the engine until the horizon.
/// Arrivals after the horizon are ignored.
RunResult run(const std::vector<ServerConfig>& servers, std::span<const Packet> arrivals, const RoutingFn& routing,
              const EjectPolicy& policy, double horizon, std::uint64_t seed, bool preemptive = true,
              bool record_trace = true);

void write_trace_csv(std::ostream& out, const Trace& trace);

}  // namespace mflb::qsim

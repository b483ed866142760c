#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mflb/qsim.hpp"
#include "oracles.hpp"

using namespace mflb;
using namespace mflb::qsim;
using mflb::testing::check_trace;
using mflb::testing::mmck_ctmc;
using mflb::testing::poisson_stream;

namespace {

ServerConfig server(int id, int channels, int buffer, double mu = 1.0) {
    ServerConfig s;
    s.id = id;
    s.channels = channels;
    s.buffer = buffer;
    s.service_rate = {{1, mu}, {2, mu}, {3, mu}};
    return s;
}

Packet pkt(std::uint64_t seq, int priority, double t, double size = 1.0, int cls = 1) {
    Packet p;
    p.id = traffic::make_packet_id(cls, seq);
    p.class_id = cls;
    p.priority = priority;
    p.arrival_time = t;
    p.size = size;
    return p;
}

Waiting waiting(std::uint64_t seq, int priority) { return Waiting{pkt(seq, priority, 0.0), 1.0, seq}; }

RoutingFn to(int id) {
    return [id](const Packet&, const Simulator&, Rng&) { return id; };
}

std::vector<std::uint64_t> started(const Trace& tr) {
    std::vector<std::uint64_t> out;
    for (const auto& ev : tr.events)
        if (ev.kind == EventKind::service_start) out.push_back(ev.packet_id);
    return out;
}

const TraceEvent* find(const Trace& tr, EventKind kind, std::uint64_t id) {
    for (const auto& ev : tr.events)
        if (ev.kind == kind && ev.packet_id == id) return &ev;
    return nullptr;
}

}  // namespace

TEST(Config, Validation) {
    auto s = server(1, 1, 0);
    EXPECT_NO_THROW(s.validate());
    s.channels = 0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = server(1, 1, -1);
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = server(1, 1, 1);
    s.service_rate[1] = 0.0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = server(1, 1, 1);
    s.capacity.mem = 0.0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    EXPECT_THROW(server(1, 1, 1).rate_for(9), std::out_of_range);
    EXPECT_DOUBLE_EQ(server(1, 3, 1, 2.0).work_capacity(1), 6.0);
    EXPECT_THROW((EjectPolicy{1.5, DisplacedFate::drop}.validate()), std::invalid_argument);
}

TEST(SelectVictim, Examples) {
    const std::vector<Waiting> b1{waiting(0, 2), waiting(1, 2), waiting(2, 1)};
    EXPECT_EQ(select_victim(b1, 0), std::optional<std::size_t>(1));
    const std::vector<Waiting> b2{waiting(0, 0), waiting(1, 0)};
    EXPECT_FALSE(select_victim(b2, 1));
    const std::vector<Waiting> b3{waiting(0, 1)};
    EXPECT_FALSE(select_victim(b3, 1));
    const std::vector<Waiting> b4{waiting(5, 3), waiting(1, 4), waiting(9, 3)};
    EXPECT_EQ(select_victim(b4, 0), std::optional<std::size_t>(1));
    EXPECT_FALSE(select_victim(std::vector<Waiting>{}, 0));
}

TEST(Admit, FreeChannelServesNow) {
    const auto cfg = server(1, 2, 2);
    ServerState st;
    Rng rng(0);
    EventLog log;
    const auto out = admit(st, cfg, pkt(0, 1, 0.0), {}, 0.0, rng, true, &log);
    EXPECT_EQ(out.kind, Admission::served_now);
    EXPECT_TRUE(st.buffer.empty());
    EXPECT_EQ(st.in_service.size(), 1u);
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log[0].kind, EventKind::service_start);
}

TEST(Admit, EjectsLowestPriorityWhenFull) {
    const auto cfg = server(1, 1, 2);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 0, 0.0), {}, 0.0, rng);
    admit(st, cfg, pkt(1, 2, 0.0), {}, 0.0, rng);
    admit(st, cfg, pkt(2, 2, 0.0), {}, 0.0, rng);
    ASSERT_EQ(st.buffer.size(), 2u);
    EventLog log;
    const auto out = admit(st, cfg, pkt(3, 1, 0.0), {1.0, DisplacedFate::drop}, 0.0, rng, true, &log);
    EXPECT_EQ(out.kind, Admission::queued_after_eject);
    EXPECT_EQ(out.victim, traffic::make_packet_id(1, 2));
    ASSERT_EQ(st.buffer.size(), 2u);
    EXPECT_EQ(st.buffer[0].pkt.priority, 1);
    EXPECT_EQ(st.buffer[1].pkt.id, traffic::make_packet_id(1, 1));
    EXPECT_TRUE(st.displaced.empty());
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log[0].kind, EventKind::eject);
}

TEST(Admit, RequeueKeepsVictimWaiting) {
    const auto cfg = server(1, 1, 1);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 0, 0.0), {}, 0.0, rng);
    admit(st, cfg, pkt(1, 2, 0.0), {}, 0.0, rng);
    const auto out = admit(st, cfg, pkt(2, 1, 0.0), {1.0, DisplacedFate::requeue}, 0.0, rng);
    EXPECT_EQ(out.kind, Admission::queued_after_eject);
    ASSERT_EQ(st.displaced.size(), 1u);
    EXPECT_EQ(st.displaced[0].pkt.id, traffic::make_packet_id(1, 1));
    EXPECT_EQ(st.in_system(), 3u);
}

TEST(Admit, BetaZeroLosesArrival) {
    const auto cfg = server(1, 1, 1);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 0, 0.0), {}, 0.0, rng);
    admit(st, cfg, pkt(1, 2, 0.0), {}, 0.0, rng);
    EventLog log;
    const auto out = admit(st, cfg, pkt(2, 1, 0.0), {0.0, DisplacedFate::drop}, 0.0, rng, true, &log);
    EXPECT_EQ(out.kind, Admission::lost_full);
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log[0].kind, EventKind::loss_full);
    EXPECT_EQ(log[0].packet_id, traffic::make_packet_id(1, 2));
}

TEST(Admit, EqualPriorityNeverEjected) {
    const auto cfg = server(1, 1, 1);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 1, 0.0), {}, 0.0, rng);
    admit(st, cfg, pkt(1, 1, 0.0), {}, 0.0, rng);
    EXPECT_EQ(admit(st, cfg, pkt(2, 1, 0.0), {}, 0.0, rng).kind, Admission::lost_full);
}

TEST(Admit, BetaIsAProbability) {
    const auto cfg = server(1, 1, 1);
    Rng rng(123);
    int ejected = 0;
    const int trials = 20000;
    for (int i = 0; i < trials; ++i) {
        ServerState st;
        admit(st, cfg, pkt(0, 0, 0.0), {}, 0.0, rng);
        admit(st, cfg, pkt(1, 2, 0.0), {}, 0.0, rng);
        if (admit(st, cfg, pkt(2, 1, 0.0), {0.3, DisplacedFate::drop}, 0.0, rng).kind == Admission::queued_after_eject)
            ++ejected;
    }
    const double sd = std::sqrt(0.3 * 0.7 / trials);
    EXPECT_NEAR(static_cast<double>(ejected) / trials, 0.3, 4 * sd);
}

TEST(Admit, PreemptionMovesVictimToBuffer) {
    const auto cfg = server(1, 1, 1);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 2, 0.0, 4.0), {}, 0.0, rng);
    EventLog log;
    const auto out = admit(st, cfg, pkt(1, 0, 1.0), {}, 1.0, rng, true, &log);
    EXPECT_EQ(out.kind, Admission::served_now);
    EXPECT_EQ(out.preempted, traffic::make_packet_id(1, 0));
    ASSERT_EQ(st.buffer.size(), 1u);
    EXPECT_DOUBLE_EQ(st.buffer[0].remaining, 3.0);  // one unit of work done at rate 1
    EXPECT_EQ(st.in_service[0].pkt.priority, 0);
}

TEST(Admit, PreemptionWithFullBufferLosesVictim) {
    const auto cfg = server(1, 1, 0);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 2, 0.0), {}, 0.0, rng);
    EventLog log;
    admit(st, cfg, pkt(1, 0, 0.5), {}, 0.5, rng, true, &log);
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(log[0].kind, EventKind::preempt);
    EXPECT_EQ(log[1].kind, EventKind::loss_full);
    EXPECT_EQ(log[1].packet_id, traffic::make_packet_id(1, 0));
    EXPECT_EQ(log[2].kind, EventKind::service_start);
}

TEST(Admit, NonPreemptiveQueues) {
    const auto cfg = server(1, 1, 1);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 2, 0.0), {}, 0.0, rng, false);
    EXPECT_EQ(admit(st, cfg, pkt(1, 0, 0.5), {}, 0.5, rng, false).kind, Admission::queued);
    EXPECT_EQ(st.in_service[0].pkt.priority, 2);
}

TEST(Admit, BufferOrderedByPriorityThenEntry) {
    const auto cfg = server(1, 1, 5);
    ServerState st;
    Rng rng(0);
    admit(st, cfg, pkt(0, 0, 0.0), {}, 0.0, rng);
    const int prios[] = {2, 1, 2, 0, 1};
    for (int i = 0; i < 5; ++i) admit(st, cfg, pkt(i + 1, prios[i], 0.0), {}, 0.0, rng);
    std::vector<std::pair<int, std::uint64_t>> got;
    for (const auto& w : st.buffer) got.emplace_back(w.pkt.priority, w.pkt.id & 0xff);
    const std::vector<std::pair<int, std::uint64_t>> want{{0, 4}, {1, 2}, {1, 5}, {2, 1}, {2, 3}};
    EXPECT_EQ(got, want);
}

TEST(Expire, Examples) {
    const auto cfg = server(1, 1, 4);
    ServerState st;
    Rng rng(0);
    auto live = pkt(1, 1, 0.0);
    auto dead1 = pkt(2, 1, 0.0);
    auto dead2 = pkt(3, 2, 0.0);
    auto serving = pkt(0, 0, 0.0);
    serving.expiry_time = 0.5;
    live.expiry_time = 10.0;
    dead1.expiry_time = 2.0;
    dead2.expiry_time = 1.0;
    admit(st, cfg, serving, {}, 0.0, rng);
    admit(st, cfg, dead1, {}, 0.0, rng);
    admit(st, cfg, live, {}, 0.0, rng);
    admit(st, cfg, dead2, {}, 0.0, rng);

    EXPECT_TRUE(expire(st, cfg, 0.9).empty());
    EXPECT_EQ(st.buffer.size(), 3u);
    const auto evs = expire(st, cfg, 2.0);  // boundary inclusive
    ASSERT_EQ(evs.size(), 2u);
    for (const auto& ev : evs) EXPECT_EQ(ev.kind, EventKind::loss_expired);
    ASSERT_EQ(st.buffer.size(), 1u);
    EXPECT_EQ(st.buffer[0].pkt.id, live.id);
    EXPECT_EQ(st.in_service.size(), 1u);  // in-service packets never expire
}

TEST(Run, EmptyArrivals) {
    const std::vector<ServerConfig> servers{server(1, 1, 1)};
    const auto r = run(servers, {}, to(1), {}, 10.0, 0);
    ASSERT_EQ(r.trace.events.size(), 1u);
    EXPECT_EQ(r.trace.events[0].kind, EventKind::horizon);
    EXPECT_EQ(r.trace.events[0].server_id, -1);
    EXPECT_DOUBLE_EQ(r.trace.horizon, 10.0);
}

TEST(Run, ServiceTimeIsSizeOverRate) {
    const std::vector<ServerConfig> servers{server(1, 1, 1, 4.0)};
    const std::vector<Packet> in{pkt(0, 0, 1.0, 2.0)};
    const auto r = run(servers, in, to(1), {}, 10.0, 0);
    const auto* dep = find(r.trace, EventKind::departure, in[0].id);
    ASSERT_NE(dep, nullptr);
    EXPECT_DOUBLE_EQ(dep->time, 1.5);
}

TEST(Run, PreemptiveResume) {
    const std::vector<ServerConfig> servers{server(1, 1, 1)};
    const std::vector<Packet> in{pkt(0, 2, 0.0, 1.0), pkt(1, 0, 0.5, 1.0)};
    const auto r = run(servers, in, to(1), {}, 10.0, 0);
    EXPECT_DOUBLE_EQ(find(r.trace, EventKind::departure, in[1].id)->time, 1.5);
    EXPECT_DOUBLE_EQ(find(r.trace, EventKind::departure, in[0].id)->time, 2.0);
    EXPECT_NE(find(r.trace, EventKind::preempt, in[0].id), nullptr);
}

TEST(Run, RequeuedVictimRejoinsBehindItsClass) {
    // c = 1, K = 2. B and C (priority 2) wait; D (priority 1) ejects C. A requeued C takes the place that
    // opens at t = 1 and E finds the buffer full; a dropped C leaves that place to E.
    const std::vector<ServerConfig> servers{server(1, 1, 2)};
    const std::vector<Packet> in{pkt(0, 0, 0.0, 1.0), pkt(1, 2, 0.1), pkt(2, 2, 0.2), pkt(3, 1, 0.3),
                                 pkt(4, 2, 1.5)};
    for (auto fate : {DisplacedFate::requeue, DisplacedFate::drop}) {
        const auto r = run(servers, in, to(1), {1.0, fate}, 100.0, 0);
        ASSERT_NE(find(r.trace, EventKind::eject, in[2].id), nullptr);
        std::vector<std::uint64_t> want{in[0].id, in[3].id, in[1].id};
        want.push_back(fate == DisplacedFate::requeue ? in[2].id : in[4].id);
        EXPECT_EQ(started(r.trace), want);
        const auto rep = check_trace(r.trace, servers);
        EXPECT_TRUE(rep.ok()) << rep.violations.front();
        EXPECT_EQ(rep.eject_drops, fate == DisplacedFate::drop ? 1u : 0u);
    }
}

TEST(Run, ExpiryIsLazyAtEventTimes) {
    const std::vector<ServerConfig> servers{server(1, 1, 2)};
    auto waiting_pkt = pkt(1, 1, 0.1);
    waiting_pkt.expiry_time = 0.5;
    auto serving = pkt(0, 0, 0.0, 2.0);
    serving.expiry_time = 0.2;
    const std::vector<Packet> in{serving, waiting_pkt};
    const auto r = run(servers, in, to(1), {}, 10.0, 0);
    const auto* ev = find(r.trace, EventKind::loss_expired, waiting_pkt.id);
    ASSERT_NE(ev, nullptr);
    EXPECT_DOUBLE_EQ(ev->time, 2.0);  // first event after expiry is the departure
    EXPECT_NE(find(r.trace, EventKind::departure, serving.id), nullptr);
}

TEST(Run, UnknownServerIdRejected) {
    const std::vector<ServerConfig> servers{server(1, 1, 1)};
    const std::vector<Packet> in{pkt(0, 0, 0.0)};
    EXPECT_THROW(run(servers, in, to(7), {}, 10.0, 0), std::out_of_range);
}

TEST(Run, ArrivalsAfterHorizonIgnored) {
    const std::vector<ServerConfig> servers{server(1, 1, 1)};
    const std::vector<Packet> in{pkt(0, 0, 1.0), pkt(1, 0, 20.0)};
    const auto r = run(servers, in, to(1), {}, 10.0, 0);
    EXPECT_EQ(r.counters[0].per_class.at(1).arrivals, 1u);
}

TEST(Run, OutOfOrderArrivalRejected) {
    Simulator sim({server(1, 1, 1)}, {}, {});
    sim.arrive(pkt(0, 0, 2.0), 1);
    EXPECT_THROW(sim.arrive(pkt(1, 0, 1.0), 1), std::invalid_argument);
}

TEST(Run, DeterministicPerSeed) {
    const std::vector<ServerConfig> servers{server(1, 2, 3), server(2, 1, 2, 2.0)};
    auto in = poisson_stream(2.5, 2000.0, 11);
    std::mt19937_64 prio(3);
    for (auto& p : in) p.priority = static_cast<int>(prio() % 3);
    const RoutingFn routing = [](const Packet&, const Simulator&, Rng& rng) { return 1 + static_cast<int>(rng() % 2); };
    const EjectPolicy policy{0.5, DisplacedFate::requeue};
    std::ostringstream a, b, c;
    write_trace_csv(a, run(servers, in, routing, policy, 2000.0, 5).trace);
    write_trace_csv(b, run(servers, in, routing, policy, 2000.0, 5).trace);
    write_trace_csv(c, run(servers, in, routing, policy, 2000.0, 6).trace);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str(), c.str());
}

TEST(Run, TraceCsvFormat) {
    const std::vector<ServerConfig> servers{server(3, 1, 1)};
    const std::vector<Packet> in{pkt(0, 1, 0.25, 0.5)};
    std::ostringstream out;
    write_trace_csv(out, run(servers, in, to(3), {}, 1.0, 0).trace);
    const std::string id = std::to_string(in[0].id);
    EXPECT_EQ(out.str(), "time,kind,packet_id,class,priority,server,queue_len_after\n"
                         "0.25,arrival," + id + ",1,1,3,0\n"
                         "0.25,service_start," + id + ",1,1,3,0\n"
                         "0.75,departure," + id + ",1,1,3,0\n"
                         "1,horizon,0,0,0,-1,0\n");
}

TEST(Utilization, IdleIsZero) {
    Simulator sim({server(1, 1, 1)}, {}, {});
    sim.advance_to(5.0);
    const auto u = sim.take_utilization();
    EXPECT_EQ(u[0].total.cpu, 0.0);
    EXPECT_EQ(u[0].total.mem, 0.0);
    EXPECT_EQ(u[0].total.disk, 0.0);
}

TEST(Utilization, SustainedServiceRatio) {
    auto cfg = server(1, 1, 0, 5.0);
    cfg.capacity = {10.0, 100.0, 100.0};
    Simulator sim({cfg}, {}, {});
    sim.arrive(pkt(0, 0, 0.0, 1000.0), 1);
    sim.advance_to(10.0);
    const auto u = sim.take_utilization();
    EXPECT_NEAR(u[0].total.cpu, 0.5, 1e-12);
    EXPECT_NEAR(u[0].total.mem, 0.05, 1e-12);
    EXPECT_NEAR(u[0].per_class.at(1).cpu, 0.5, 1e-12);
}

TEST(Utilization, CurrentWindowAverage) {
    auto cfg = server(1, 1, 0, 1.0);
    cfg.capacity = {1.0, 10.0, 10.0};
    Simulator sim({cfg}, {}, {});
    sim.arrive(pkt(0, 0, 0.0, 1.0), 1);
    EXPECT_EQ(current_utilization(sim.state(0), sim.servers()[0], 0.0).cpu, 1.0);
    EXPECT_NEAR(current_utilization(sim.state(0), sim.servers()[0], 0.5).cpu, 1.0, 1e-12);
    sim.advance_to(2.0);
    EXPECT_NEAR(current_utilization(sim.state(0), sim.servers()[0], 2.0).cpu, 0.5, 1e-12);
    EXPECT_NEAR(current_utilization(sim.state(0), sim.servers()[0], 4.0).mem, 0.025, 1e-12);
    sim.take_utilization();
    EXPECT_EQ(current_utilization(sim.state(0), sim.servers()[0], 2.0).cpu, 0.0);
}

TEST(Utilization, OverloadClampsAndClassesAdd) {
    auto cfg = server(1, 2, 4, 5.0);
    cfg.capacity = {4.0, 4.0, 4.0};
    cfg.demand_per_work[2] = {2.0, 1.0, 0.5};
    Simulator sim({cfg}, {}, {});
    sim.arrive(pkt(0, 0, 0.0, 1000.0, 1), 1);
    sim.arrive(pkt(0, 0, 0.0, 1000.0, 2), 1);
    sim.advance_to(2.0);
    const auto u = sim.take_utilization();
    const auto& pc = u[0].per_class;
    EXPECT_NEAR(pc.at(1).cpu, 5.0 / 4.0, 1e-12);
    EXPECT_NEAR(pc.at(2).cpu, 10.0 / 4.0, 1e-12);
    EXPECT_NEAR(pc.at(2).disk, 2.5 / 4.0, 1e-12);
    EXPECT_EQ(u[0].total.cpu, 1.0);
    EXPECT_EQ(u[0].total.mem, 1.0);
    EXPECT_EQ(u[0].total.disk, 1.0);
}

TEST(Utilization, BufferedWorkDrawsMemoryOnly) {
    auto cfg = server(1, 1, 2, 1.0);
    cfg.capacity = {10.0, 10.0, 10.0};
    Simulator sim({cfg}, {}, {});
    sim.arrive(pkt(0, 0, 0.0, 1000.0), 1);
    sim.arrive(pkt(1, 0, 0.0, 1000.0), 1);
    sim.advance_to(4.0);
    const auto u = sim.take_utilization();
    EXPECT_NEAR(u[0].total.cpu, 0.1, 1e-12);
    EXPECT_NEAR(u[0].total.mem, 0.2, 1e-12);
}

TEST(Utilization, WindowsRestartAfterTake) {
    auto cfg = server(1, 1, 0, 1.0);
    cfg.capacity = {1.0, 1.0, 1.0};
    Simulator sim({cfg}, {}, {});
    sim.arrive(pkt(0, 0, 0.0, 1.0), 1);
    sim.advance_to(2.0);
    EXPECT_NEAR(sim.take_utilization()[0].total.cpu, 0.5, 1e-12);
    sim.advance_to(4.0);
    EXPECT_EQ(sim.take_utilization()[0].total.cpu, 0.0);
}

TEST(Oracle, CtmcMatchesClosedFormSingleServer) {
    // M/M/1 with N system places: loss = (1 - rho) rho^N / (1 - rho^(N+1)).
    for (int K : {0, 1, 3, 4}) {
        const double rho = 0.5;
        const int N = K + 1;
        const double closed = (1 - rho) * std::pow(rho, N) / (1 - std::pow(rho, N + 1));
        EXPECT_NEAR(mmck_ctmc(1.0, 2.0, 1, K).loss, closed, 1e-12);
    }
    EXPECT_NEAR(mmck_ctmc(1.0, 2.0, 1, 3).loss, 0.032258, 1e-6);
}

TEST(Oracle, SimulationMatchesCtmcFamily) {
    for (int c : {1, 2}) {
        for (int K : {2, 4}) {
            const double lambda = 0.8 * c;
            const auto exact = mmck_ctmc(lambda, 1.0, c, K);
            const std::vector<ServerConfig> servers{server(1, c, K)};
            std::vector<double> loss, mean_n;
            const double horizon = 50000.0 / lambda;
            for (std::uint64_t seed = 0; seed < 10; ++seed) {
                const auto in = poisson_stream(lambda, horizon, 1000 + seed);
                const auto r = run(servers, in, to(1), {}, horizon, seed, true, false);
                const auto& cc = r.counters[0].per_class.at(1);
                loss.push_back(static_cast<double>(cc.loss_full) / cc.arrivals);
                mean_n.push_back(r.counters[0].occupancy_area / horizon);
            }
            auto check = [](const std::vector<double>& x, double target, const char* what, int c, int K) {
                double m = 0.0, v = 0.0;
                for (double e : x) m += e / x.size();
                for (double e : x) v += (e - m) * (e - m) / (x.size() - 1);
                EXPECT_LE(std::abs(m - target), 3 * std::sqrt(v / x.size()))
                    << what << " c=" << c << " K=" << K << " sim=" << m << " exact=" << target;
            };
            check(loss, exact.loss, "loss", c, K);
            check(mean_n, exact.mean_n, "mean_n", c, K);
        }
    }
}

TEST(Invariants, RandomizedScenarios) {
    std::mt19937_64 gen(77);
    for (int trial = 0; trial < 40; ++trial) {
        const int n_servers = 1 + static_cast<int>(gen() % 3);
        std::vector<ServerConfig> servers;
        for (int j = 0; j < n_servers; ++j)
            servers.push_back(server(j + 1, 1 + static_cast<int>(gen() % 3), static_cast<int>(gen() % 4),
                                     0.5 + static_cast<double>(gen() % 4)));
        const double betas[] = {0.0, 0.5, 1.0};
        const EjectPolicy policy{betas[gen() % 3], gen() % 2 ? DisplacedFate::requeue : DisplacedFate::drop};
        const bool preemptive = gen() % 2;
        const double horizon = 300.0;

        std::vector<traffic::PacketStream> streams;
        for (int cls = 1; cls <= 3; ++cls) {
            const double lifetime = gen() % 2 ? 0.5 + static_cast<double>(gen() % 5) : 0.0;
            streams.push_back(poisson_stream(1.0 + static_cast<double>(gen() % 5), horizon, gen(), cls, cls - 1,
                                             lifetime));
        }
        const auto in = traffic::merge_streams(streams);
        const RoutingFn routing = [n_servers](const Packet&, const Simulator&, Rng& rng) {
            return 1 + static_cast<int>(rng() % n_servers);
        };
        const auto r = run(servers, in, routing, policy, horizon, trial, preemptive);
        mflb::testing::CheckOptions opts;
        opts.priority_safety = preemptive && policy.beta == 1.0;
        const auto rep = check_trace(r.trace, servers, opts);
        ASSERT_TRUE(rep.ok()) << "trial " << trial << ": " << rep.violations.front();

        std::uint64_t arrivals = 0, departures = 0, full = 0, expired = 0, drops = 0, in_system = 0, ejects = 0,
                      preempts = 0;
        for (const auto& sc : r.counters) {
            in_system += sc.in_system_at_end;
            for (const auto& [cls, cc] : sc.per_class) {
                arrivals += cc.arrivals;
                departures += cc.departures;
                full += cc.loss_full;
                expired += cc.loss_expired;
                drops += cc.eject_drops;
                ejects += cc.ejects;
                preempts += cc.preempts;
            }
        }
        EXPECT_EQ(arrivals, in.size());
        EXPECT_EQ(rep.arrivals, arrivals);
        EXPECT_EQ(rep.departures, departures);
        EXPECT_EQ(rep.loss_full, full);
        EXPECT_EQ(rep.loss_expired, expired);
        EXPECT_EQ(rep.eject_drops, drops);
        EXPECT_EQ(rep.ejects, ejects);
        EXPECT_EQ(rep.preempts, preempts);
        EXPECT_EQ(rep.in_system, in_system);
        EXPECT_EQ(arrivals, departures + full + expired + drops + in_system);
    }
}

TEST(Invariants, CheckerCatchesViolations) {
    const std::vector<ServerConfig> servers{server(1, 1, 1)};
    Trace tr;
    auto ev = [](double t, EventKind k, std::uint64_t id, int prio, int q = 0) {
        TraceEvent e;
        e.time = t;
        e.kind = k;
        e.packet_id = id;
        e.class_id = 1;
        e.priority = prio;
        e.server_id = 1;
        e.queue_len_after = q;
        return e;
    };
    TraceEvent horizon;
    horizon.time = 10.0;
    horizon.kind = EventKind::horizon;
    horizon.server_id = -1;

    tr.events = {ev(0, EventKind::arrival, 1, 0), ev(0, EventKind::departure, 1, 0), horizon};
    EXPECT_FALSE(check_trace(tr, servers).ok());  // departure without service

    tr.events = {ev(0, EventKind::arrival, 1, 0, 2), horizon};
    EXPECT_FALSE(check_trace(tr, servers).ok());  // queue above K

    tr.events = {ev(0, EventKind::arrival, 1, 2), ev(0, EventKind::service_start, 1, 2),
                 ev(1, EventKind::arrival, 2, 0, 1), horizon};
    EXPECT_FALSE(check_trace(tr, servers).ok());  // priority inversion

    tr.events = {ev(0, EventKind::arrival, 1, 0), ev(0, EventKind::service_start, 1, 0),
                 ev(1, EventKind::arrival, 2, 1, 1), ev(2, EventKind::arrival, 3, 1, 1),
                 ev(2, EventKind::eject, 2, 1, 0), horizon};
    EXPECT_FALSE(check_trace(tr, servers).ok());  // eject by an equal-priority arrival

    tr.events = {ev(1, EventKind::arrival, 1, 0), ev(0.5, EventKind::service_start, 1, 0), horizon};
    EXPECT_FALSE(check_trace(tr, servers).ok());  // time goes backwards
}

#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mflb/mfa.hpp"
#include "mflb/qsim.hpp"
#include "mflb/rng.hpp"

namespace mflb::balancer {

using qsim::Resources;
using qsim::ServerConfig;

struct UtilSample {
    double time = 0.0;
    Resources u;
};

struct ClassStats {
    double lambda_hat = 0.0;  // arrivals per second
    double mean_rate = 0.0;   // admitted work units per second (m)
    double variance_coef = 0.0;  // per-slot work variance / m (a)
};

struct FlowStats {
    std::map<int, ClassStats> classes;
    std::vector<std::vector<UtilSample>> util_history;  // one time-ordered history per server
};

struct ResourceDemand {
    int class_id = 0;
    double H = 0.5;
    double delta_h = 0.0;
    double effective_bandwidth = 0.0;  // work units per second
    double safety_factor = 1.0;
};

/// Row-stochastic routing matrix; rows follow `class_ids`, columns follow server order.
struct FlowAssignment {
    std::vector<int> class_ids;
    std::vector<std::vector<double>> w;

    const std::vector<double>& row(int class_id) const;
};

struct Forecast {
    Resources u;      // predicted utilization, clamped to [0, 1]
    Resources level;  // smoothing state before clamping
};

/// Per-class statistics for one analysis window [window_start, window_start + window_span).
/// `events` may hold any trace slice; only arrivals and admission losses inside the window count.
/// `snapshots` (one per server, may be empty) are appended to `prior` histories at time window_start + window_span.
FlowStats collect_stats(std::span<const qsim::TraceEvent> events, std::span<const int> class_ids, double window_start,
                        double window_span, double dt, std::span<const qsim::Utilization> snapshots = {},
                        const FlowStats* prior = nullptr);

/// Norros-form effective bandwidth of a fractional Brownian traffic source,
/// optionally widened by (1 + gamma * max(0, delta_h)).
double effective_bandwidth(double m, double a, double H, double x, double eps,
                           std::optional<double> delta_h = std::nullopt, double gamma = 0.5);

/// Exponential smoothing, component-wise, seeded with the first observation.
Forecast forecast_util(std::span<const UtilSample> history, double alpha);

/// Normalizes nonnegative headrooms to weights; all zero gives uniform weights.
std::vector<double> proportional_weights(std::span<const double> headroom);

/// Headroom-proportional flow split. Classes are served in `class_order`
/// (highest priority first); each class first fills the free capacity of the
/// servers in proportion to their headroom and spreads any demand beyond the
/// free capacity in proportion to raw capacity. The capacity a class takes is
/// deducted before the next class is placed. When the forecasts leave no
/// headroom on any server the split is uniform.
FlowAssignment compute_assignment(std::span<const ResourceDemand> demands, std::span<const Forecast> forecasts,
                                  std::span<const ServerConfig> servers);

struct Correction {
    FlowAssignment assignment;
    std::map<int, double> factors;
    std::vector<ResourceDemand> demands;  // after scaling
};

/// Scales each class's demand by max(1, observed / forecast) and recomputes the
/// split. Over-forecasts leave the demand and the assignment untouched.
Correction correct_underestimate(const FlowAssignment& assignment, std::span<const ResourceDemand> demands,
                                 const FlowStats& observed, const std::map<int, double>& forecast_intensity,
                                 std::span<const Forecast> forecasts, std::span<const ServerConfig> servers);

struct ClassInfo {
    int class_id = 1;
    int priority = 0;
    double mean_size = 1.0;
};

struct BalancerConfig {
    double alpha = 0.3;
    double gamma = 0.5;
    double eps = 1e-3;
    double dt = 1.0;
    std::optional<mfa::MfdfaConfig> mfdfa;  // defaults for the window length when empty
    std::vector<ClassInfo> classes;
    std::map<int, double> buffer_work;  // x per class; defaults to total buffer places * mean size
};

struct BalancerState {
    std::map<int, double> intensity_forecast;  // lambda tilde per class
    std::optional<mfa::HurstSpectrum> spectrum;
};

struct ClassDecision {
    int class_id = 0;
    double lambda_hat = 0.0;
    double lambda_forecast = 0.0;  // 0 when no forecast existed yet
    double demand = 0.0;           // effective bandwidth after correction
    double factor = 1.0;
};

struct BalanceResult {
    FlowAssignment assignment;
    std::vector<Forecast> forecasts;
    mfa::HurstSpectrum spectrum;
    bool spectrum_reused = false;
    std::vector<ClassDecision> classes;
    BalancerState next;
};

/// One pass of the balancing loop over an analysis window: spectrum, demand
/// per class, utilization forecasts, split, under-forecast correction.
BalanceResult balance_step(std::span<const double> window, const FlowStats& stats, const BalancerState& prior,
                           std::span<const ServerConfig> servers, const BalancerConfig& cfg);

/// Capacity-proportional split used before the first window completes.
FlowAssignment initial_assignment(std::span<const int> class_ids, std::span<const ServerConfig> servers);

/// Samples a column of `row` with one uniform draw.
std::size_t sample_weighted(std::span<const double> row, Rng& rng);

enum class Baseline { round_robin, least_loaded, weighted_random };

std::optional<Baseline> parse_baseline(std::string_view name);
std::string_view to_string(Baseline kind);

/// Baseline dispatchers. Round robin keeps a counter per class.
class BaselineRouter {
public:
    BaselineRouter(Baseline kind, std::vector<ServerConfig> servers);
    /// Returns a server id.
    int route(const traffic::Packet& pkt, std::span<const double> current_load, Rng& rng);
    int route(const traffic::Packet& pkt, const qsim::Simulator& sim, Rng& rng);

private:
    Baseline kind_;
    std::vector<ServerConfig> servers_;
    std::map<int, std::size_t> next_;
};

struct WindowLogRow {
    std::size_t window_start = 0;
    double H = 0.0;
    double delta_h = 0.0;
    int class_id = 0;
    double lambda_hat = 0.0;
    double C = 0.0;
    double factor = 1.0;
    std::vector<double> w;
};

void write_window_log_csv(std::ostream& out, std::span<const WindowLogRow> rows, std::size_t n_servers);

}  // namespace mflb::balancer

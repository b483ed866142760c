#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mflb/balancer.hpp"
#include "mflb/mfa.hpp"
#include "mflb/qsim.hpp"
#include "mflb/traffic.hpp"

namespace mflb::harness {

enum class Algorithm { multifractal, round_robin, least_loaded, weighted_random };
enum class TrafficModel { constant, fgn, cascade };

std::optional<Algorithm> parse_algorithm(std::string_view name);
std::string_view to_string(Algorithm a);
std::string_view to_string(TrafficModel m);

struct FlowConfig {
    traffic::FlowSpec spec;
    TrafficModel model = TrafficModel::cascade;
    double sigma = 0.2;  // fGn standard deviation relative to a unit mean rate
    bool randomize = true;  // cascade split order
    std::vector<traffic::RateStep> rate_changes;
};

struct Scenario {
    std::vector<qsim::ServerConfig> servers;
    std::vector<FlowConfig> flows;
    Algorithm algorithm = Algorithm::multifractal;
    mfa::WindowConfig window;
    std::optional<mfa::MfdfaConfig> mfdfa;
    qsim::EjectPolicy eject;
    bool preemptive = true;
    double duration = 0.0;
    double dt = 1.0;
    std::uint64_t seed = 0;
    double alpha = 0.3;
    double gamma = 0.5;
    double eps = 1e-3;

    std::vector<int> class_ids() const;
    /// Throws ScenarioError naming the violated invariant.
    void validate() const;
};

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses a JSON scenario document. Unknown keys are rejected; omitted
/// optional fields take their defaults.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::filesystem::path& path);
/// Canonical JSON form (all defaults spelled out).
std::string scenario_to_json(const Scenario& s);
/// FNV-1a over the canonical form, seed excluded, as 16 hex digits.
std::string config_digest(const Scenario& s);

struct MetricsReport {
    double throughput = 0.0;
    std::map<int, double> loss;  // class -> fraction
    double total_loss = 0.0;
    std::optional<double> response_p50;
    std::optional<double> response_p95;
    std::optional<double> response_p99;
    std::map<int, qsim::Resources> utilization;  // server id -> mean triple
    double jain = 1.0;
    std::uint64_t control_overhead = 0;
    std::uint64_t arrivals = 0;
    std::uint64_t departures = 0;
    std::string config_digest;
    std::uint64_t seed = 0;
};

/// (sum x)^2 / (n sum x^2); an all-zero vector reports 1 by convention.
double jain_index(std::span<const double> x);

/// Nearest-rank percentile of an unsorted sample; nullopt when empty.
std::optional<double> nearest_rank(std::vector<double> values, double p);

/// Metrics rebuilt from the trace alone. `windows` is the number of
/// balancing windows (one feedback message per server per window).
MetricsReport metrics_from_trace(const qsim::Trace& trace, std::span<const qsim::ServerConfig> servers,
                                 double duration, std::uint64_t windows = 0);

struct Traffic {
    traffic::PacketStream packets;
    std::vector<double> slot_counts;  // aggregate arrivals per full analysis slot
};

/// Synthesizes every flow from the scenario seed; independent of the algorithm.
Traffic generate_traffic(const Scenario& s);

struct WindowRecord {
    balancer::WindowLogRow row;
    double lambda_forecast = 0.0;
    bool spectrum_reused = false;
};

struct RunOutput {
    qsim::Trace trace;
    std::vector<WindowRecord> windows;
    MetricsReport metrics;
    std::uint64_t arrival_digest = 0;
    std::size_t window_count = 0;
};

RunOutput run_scenario(const Scenario& s);

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n = 0;
};

struct ComparisonRow {
    Algorithm algorithm = Algorithm::multifractal;
    std::map<std::string, MetricSummary> metrics;
    std::size_t jain_wins = 0;
    std::size_t loss_wins = 0;
    std::vector<MetricsReport> per_seed;
    std::vector<std::uint64_t> arrival_digests;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;  // one per requested algorithm, in request order
    std::size_t n_seeds = 0;
};

/// Runs every (algorithm, seed) pair on the same traffic realizations per seed.
ComparisonTable compare_algorithms(const Scenario& s, std::span<const Algorithm> algorithms,
                                   std::span<const std::uint64_t> seeds);

void write_metrics_json(std::ostream& out, const MetricsReport& m);
void write_comparison_csv(std::ostream& out, const ComparisonTable& table);

/// Command-line entry point; args exclude the program name.
int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mflb::harness

#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mflb::traffic {

/// Uniformly sampled series, one value per slot of length `dt` seconds.
struct TimeSeries {
    std::vector<double> values;
    double dt = 1.0;

    std::size_t size() const { return values.size(); }
    /// Throws std::invalid_argument on empty series, non-finite samples or dt <= 0.
    void validate() const;
};

struct FlowSpec {
    int class_id = 1;
    int priority = 0;  // 0 is the highest priority
    double base_rate = 0.0;  // packets per second
    double hurst = 0.7;
    double cascade_weight = 0.75;
    double mean_size = 1.0;  // work units
    double lifetime = std::numeric_limits<double>::infinity();

    void validate() const;
};

struct Packet {
    std::uint64_t id = 0;
    int class_id = 0;
    int priority = 0;
    double arrival_time = 0.0;
    double size = 0.0;
    double expiry_time = std::numeric_limits<double>::infinity();
};

using PacketStream = std::vector<Packet>;

/// Multiplies the intensity by `factor` for every slot starting at or after `at` seconds.
struct RateStep {
    double at = 0.0;
    double factor = 1.0;
};

// Packet ids carry the class id in the high bits so ids stay unique after merging.
inline constexpr int kPacketClassShift = 40;
inline std::uint64_t make_packet_id(int class_id, std::uint64_t seq) {
    return (static_cast<std::uint64_t>(class_id) << kPacketClassShift) | seq;
}

/// Stationary fractional Gaussian noise by exact circulant embedding
/// (Davies-Harte). Deterministic in all arguments.
TimeSeries gen_fgn(double hurst, std::size_t n, double sigma, std::uint64_t seed, double dt = 1.0);

/// Binomial multiplicative cascade of 2^depth samples carrying unit mass.
/// With `randomize`, the (a, 1-a) pair is assigned to the two halves of each
/// split in a seeded random order; otherwise the left half always gets `a`.
TimeSeries gen_binomial_cascade(double a, int depth, bool randomize, std::uint64_t seed);

/// Closed-form generalized Hurst exponent of the binomial cascade:
/// h(q) = 1/q - ln(a^q + (1-a)^q) / (q ln 2). Rejects q == 0.
double analytic_binomial_h(double a, double q);

/// Doubly stochastic Poisson arrivals. The rate series is normalized to mean 1
/// and scaled by spec.base_rate; the series repeats if the horizon outlasts it.
/// Sizes are exponential with mean spec.mean_size.
PacketStream gen_arrivals(const TimeSeries& rate, const FlowSpec& spec, double horizon,
                          std::uint64_t seed, std::span<const RateStep> steps = {});

/// Time-ordered merge; equal timestamps are ordered by (class_id, id).
PacketStream merge_streams(std::span<const PacketStream> streams);

/// Replaces negative samples with 0.
TimeSeries clip_nonnegative(TimeSeries series);

/// FNV-1a digest over every packet field, for checking that two streams are identical.
std::uint64_t stream_digest(std::span<const Packet> packets);

void write_series_csv(std::ostream& out, const TimeSeries& series);
TimeSeries read_series_csv(std::istream& in, double dt = 1.0);
void write_packets_csv(std::ostream& out, std::span<const Packet> packets);

}  // namespace mflb::traffic

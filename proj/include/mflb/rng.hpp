#pragma once

#include <cstdint>
#include <random>

namespace mflb {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream `offset` of a master seed. Streams with different
// offsets never share state, so adding a consumer does not shift the others.
inline Rng make_stream(std::uint64_t master, std::uint64_t offset) {
    return Rng(splitmix64(splitmix64(master) ^ splitmix64(offset + 0x51ed27ULL)));
}

// Fixed stream offsets used across the toolkit.
namespace stream {
inline constexpr std::uint64_t routing = 0;
inline constexpr std::uint64_t server_base = 1;        // + server index
inline constexpr std::uint64_t traffic_base = 1 << 20; // + 2*flow index (+1 for arrivals)
}  // namespace stream

}  // namespace mflb

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace fedlab {

// Deterministic splitmix64 stream. Every random decision in the library is
// drawn from a stream keyed by an integer tuple (seed, purpose, client,
// round, step, ...), so results depend only on the key and never on call
// interleaving, scheduling or thread count.
class StreamRng {
public:
    explicit StreamRng(std::uint64_t state) : state_(state) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Derives a stream from a seed and a key tuple by folding the parts.
    static StreamRng keyed(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
        std::uint64_t h = mix(seed);
        for (std::uint64_t k : key) {
            h = mix(h ^ mix(k));
        }
        return StreamRng(h);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1), using the top 53 bits.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (cosine branch only; one normal per two
    // uniform draws keeps the stream stateless apart from the counter).
    double next_normal() {
        double u1 = next_unit();
        double u2 = next_unit();
        if (u1 <= 0.0) {
            u1 = 0x1.0p-53;
        }
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased integer in [0, bound) by Lemire's multiply-shift rejection.
    std::uint64_t below(std::uint64_t bound) {
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            std::uint64_t threshold = (0ULL - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    std::uint64_t state_;
};

// Stream purposes; keeps keys from different subsystems disjoint.
namespace stream_purpose {
inline constexpr std::uint64_t dataset = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t probe_pairs = 3;
inline constexpr std::uint64_t sigma = 4;
inline constexpr std::uint64_t batch = 5;
} // namespace stream_purpose

} // namespace fedlab

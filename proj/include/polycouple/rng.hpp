#pragma once

#include <cmath>
#include <cstdint>

namespace polycouple {

// SplitMix64 finalizer; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace detail {

// Ziggurat tables for the standard normal, 128 layers (Doornik's R and V).
// W[i] converts a 53-bit mantissa directly to a coordinate in layer i,
// K[i] is the integer accept threshold, F[i] = exp(-X[i]^2/2).
struct ZigguratTable {
    static constexpr int layers = 128;
    double W[layers];
    double F[layers + 1];
    double X[layers + 1];
    std::uint64_t K[layers];

    ZigguratTable() {
        const double r = 3.442619855899;
        const double v = 9.91256303526217e-3;
        const double two53 = 9007199254740992.0;
        X[1] = r;
        F[1] = std::exp(-0.5 * r * r);
        X[0] = v / F[1];
        F[0] = 1.0;
        for (int i = 1; i < layers; ++i) {
            F[i + 1] = F[i] + v / X[i];
            X[i + 1] = (i + 1 == layers) ? 0.0 : std::sqrt(-2.0 * std::log(F[i + 1]));
        }
        for (int i = 0; i < layers; ++i) {
            K[i] = static_cast<std::uint64_t>((X[i + 1] / X[i]) * two53);
            W[i] = X[i] / two53;
        }
    }
};

inline const ZigguratTable& ziggurat() {
    static const ZigguratTable table;
    return table;
}

}  // namespace detail

// Counter-based noise source: the n-th draw is a pure function of
// (master_seed, replica_id, n), so replicas are reproducible independent of
// scheduling and a stream can be re-created mid-run from its counter.
struct NoiseStream {
    std::uint64_t master_seed = 0;
    std::uint64_t replica_id = 0;
    std::uint64_t counter = 0;
    std::uint64_t key = 0;

    NoiseStream() = default;
    NoiseStream(std::uint64_t seed, std::uint64_t replica)
        : master_seed(seed), replica_id(replica) {
        key = mix64(seed ^ mix64(replica * 0x9E3779B97F4A7C15ULL + 0x6A09E667F3BCC909ULL));
    }

    std::uint64_t next_u64() {
        const std::uint64_t c = counter++;
        return mix64(key + c * 0x9E3779B97F4A7C15ULL);
    }

    // Uniform in [0,1), 53 significant bits.
    double next_u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via 128-layer ziggurat.
    double next_normal() {
        const detail::ZigguratTable& z = detail::ziggurat();
        for (;;) {
            const std::uint64_t u = next_u64();
            const int i = static_cast<int>(u & 127u);
            const double sign = (u & 128u) ? -1.0 : 1.0;
            const std::uint64_t m = u >> 11;
            if (m < z.K[i]) return sign * static_cast<double>(m) * z.W[i];
            if (i == 0) {
                // Tail beyond X[1], Marsaglia's exponential construction.
                const double r = z.X[1];
                for (;;) {
                    const double x = -std::log(1.0 - next_u01()) / r;
                    const double y = -std::log(1.0 - next_u01());
                    if (y + y >= x * x) return sign * (r + x);
                }
            }
            const double x = static_cast<double>(m) * z.W[i];
            const double f = z.F[i] + next_u01() * (z.F[i + 1] - z.F[i]);
            if (f < std::exp(-0.5 * x * x)) return sign * x;
        }
    }

    void next_normal_pair(double& z1, double& z2) {
        z1 = next_normal();
        z2 = next_normal();
    }
};

}  // namespace polycouple

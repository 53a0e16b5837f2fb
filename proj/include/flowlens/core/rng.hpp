#pragma once

#include <cmath>
#include <cstdint>

namespace flowlens {

// Deterministic, platform-independent generator (splitmix64 core).
// std::normal_distribution is implementation-defined, so sampling is done
// by hand to keep runs bit-reproducible across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) { return lo + float(uniform()) * (hi - lo); }

    // Integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + int(next_u64() % uint64_t(hi - lo + 1));
    }

    // Standard normal via Box-Muller (no cached spare: call pattern independent).
    double normal() {
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    float normal(float mean, float stddev) { return mean + float(normal()) * stddev; }

    // Independent child stream, useful for per-video / per-run derivation.
    Rng fork() { return Rng(next_u64() ^ 0xd1b54a32d192ed03ull); }

private:
    uint64_t state_;
};

} // namespace flowlens

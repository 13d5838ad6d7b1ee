#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fame {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Derives an independent stream from (seed, index, tag). All randomness in
// the library funnels through this: tag 0 = weight init, tag 1 = vocabulary
// sampling, tag 2 = token draws, tag 3 = data shuffling, tag 4 = dropout.
inline uint64_t derive_stream(uint64_t seed, uint64_t index, uint64_t tag) {
    return splitmix64(splitmix64(seed + index) ^ splitmix64(tag));
}

// Deterministic across platforms: raw mt19937_64 words are portable and the
// float construction below avoids std::uniform_real_distribution, whose
// output is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Uniform in [2^-53, 1): never returns 0 so log(u) is always finite.
    double next_double() {
        const uint64_t bits = engine_() >> 11;
        const double u = static_cast<double>(bits) * 0x1.0p-53;
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double next_gumbel() { return -std::log(-std::log(next_double())); }

    uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fame

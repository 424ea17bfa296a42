#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace qkd {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stable seed derivation for independent substreams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t tag = 0) {
    std::uint64_t s = seed ^ (stream * 0xd1342543de82ef95ull) ^ (tag * 0xaf251af3b0f025b5ull);
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

// Deterministic random source. std::mt19937_64 output is pinned by the
// standard; the transforms below avoid std::*_distribution, whose mappings
// are implementation-defined and would break cross-build reproducibility.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    // uniform integer in [0, n), n >= 1, rejection sampled
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t max = ~0ull;
        const std::uint64_t limit = max - max % n;
        std::uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

    // Marsaglia polar method, one spare cached
    double normal(double sigma) {
        if (have_spare_) {
            have_spare_ = false;
            return spare_ * sigma;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f * sigma;
    }

    // Independent generator for a named substream of this one's seed.
    Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace qkd

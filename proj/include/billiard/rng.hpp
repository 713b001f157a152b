#pragma once

#include <cstdint>

namespace billiard {

/// splitmix64 finalizer: a 64-bit bijective mix.
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based stream keyed by (seed, stream index). Draw i of stream s is
/// a pure function of (seed, s, i), so parallel evolution over particles is
/// reproducible independently of scheduling.
class CounterRng {
public:
    CounterRng(uint64_t seed, uint64_t stream)
        : key_(mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019ULL))), ctr_(0) {}

    uint64_t next_u64() { return mix64(key_ + (ctr_++) * 0x9E3779B97F4A7C15ULL); }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

private:
    uint64_t key_;
    uint64_t ctr_;
};

}  // namespace billiard

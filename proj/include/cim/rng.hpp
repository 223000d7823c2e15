#pragma once

#include <cstdint>

namespace cim {

// Counter-based generator built on the splitmix64 mixer. Each draw hashes
// (key, counter++), so streams derived via split() are independent of how
// many values their parent has produced.
class SplitRng {
public:
    explicit SplitRng(uint64_t seed, uint64_t stream = 0)
        : key_(mix(seed ^ 0x9e3779b97f4a7c15ull) ^ mix(stream)), counter_(0) {}

    // Derive an independent stream; deterministic in (parent key, tag).
    SplitRng split(uint64_t tag) const {
        SplitRng r(0);
        r.key_ = mix(key_ ^ mix(tag + 0x632be59bd9b4e019ull));
        r.counter_ = 0;
        return r;
    }

    uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without a cached spare (keeps draws counter-addressable).
    double normal();

    // Standard normal rejected outside [-2, 2] sigma, then scaled.
    double trunc_normal(double std_dev);

    uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_;
};

}  // namespace cim

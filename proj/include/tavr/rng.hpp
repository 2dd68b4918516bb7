#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tavr {

// Counter-based generator: every draw is a pure function of (seed, stream
// label, counter), so independent streams never interact and any draw can be
// reproduced without replaying the ones before it.
class Rng {
public:
    Rng(uint64_t seed, std::string_view stream);

    uint64_t next_u64();
    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();                       // standard normal, two draws per call
    // Uniform integer in [0, n). n must be > 0.
    uint64_t index(uint64_t n);

    // Derived stream with an extended label; shares the seed, starts at counter 0.
    Rng fork(std::string_view label) const;

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }

    static uint64_t mix(uint64_t x);
    static uint64_t hash_label(std::string_view s);

private:
    Rng(uint64_t key) : key_(key) {}
    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace tavr

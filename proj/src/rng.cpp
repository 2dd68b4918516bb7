#include "tavr/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace tavr {

namespace {
constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}

uint64_t Rng::mix(uint64_t x) {
    // splitmix64 finalizer
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

uint64_t Rng::hash_label(std::string_view s) {
    // FNV-1a 64-bit
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

Rng::Rng(uint64_t seed, std::string_view stream)
    : key_(mix(mix(seed + kGolden) ^ hash_label(stream))) {}

Rng Rng::fork(std::string_view label) const {
    return Rng(mix(key_ ^ hash_label(label)));
}

uint64_t Rng::next_u64() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    // Box-Muller, no cached spare: always exactly two draws.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint64_t Rng::index(uint64_t n) {
    if (n == 0) throw std::runtime_error("Rng::index: n must be positive");
    // 128-bit multiply keeps the mapping unbiased enough for our purposes
    // and, more importantly, deterministic across platforms.
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
}

}  // namespace tavr

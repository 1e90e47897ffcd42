#pragma once

#include <cstdint>
#include <random>

namespace cylwalk::rng {

// splitmix64 step; the de-facto standard 64-bit seed expander.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stream derivation rule: every worker stream is seeded by chaining the
// master seed with its indices through splitmix64. Results depend only on
// (master, indices), never on thread scheduling.
inline std::uint64_t derive(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master;
    std::uint64_t a = splitmix64(s);
    s = a ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
    return splitmix64(s);
}

inline std::uint64_t derive(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    return derive(derive(master, a), b);
}

inline std::mt19937_64 stream(std::uint64_t master, std::uint64_t index) {
    return std::mt19937_64(derive(master, index));
}

inline std::mt19937_64 stream(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    return std::mt19937_64(derive(master, a, b));
}

// 53-bit uniform in [0, 1). Hand-rolled so output does not depend on the
// standard library's distribution implementation.
inline double uniform(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection; n must be positive.
inline std::uint64_t below(std::mt19937_64& g, std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do { v = g(); } while (v >= limit);
    return v % n;
}

}

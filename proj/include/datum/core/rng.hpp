#ifndef DATUM_CORE_RNG_HPP
#define DATUM_CORE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string>

namespace datum {

// PCG32 (Melissa O'Neill's minimal variant). The standard library engines are
// portable but its distributions are not, so all sampling helpers live here
// and produce identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    std::uint64_t next_u64() {
        std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive. Debiased by rejection.
    int uniform_int(int lo, int hi) {
        std::uint32_t range = static_cast<std::uint32_t>(hi - lo) + 1u;
        if (range == 0u) return lo + static_cast<int>(next_u32());  // full 32-bit span
        std::uint32_t limit = ~0u - (~0u % range);
        std::uint32_t v;
        do {
            v = next_u32();
        } while (v >= limit);
        return lo + static_cast<int>(v % range);
    }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586477 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 1;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

// Derive an independent seed for a named stage or an indexed item. Used to
// keep per-item streams independent of processing order.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
    return splitmix64(seed ^ fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(seed + index);
}

}  // namespace datum

#endif

#pragma once

// Deterministic seeded randomness. Every random draw in the pipeline comes
// from a named substream keyed on (seed, stream name, qualifiers), so stage
// outputs never depend on call order and identical configs reproduce
// bit-identical artifacts on any platform. std::mt19937_64 is fully
// specified by the standard; the value transforms below are hand-rolled
// because the standard distributions are not bit-portable.

#include <cstdint>
#include <cstring>
#include <random>
#include <string_view>

namespace rscn {

inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvOffset) {
    return fnv1a(s.data(), s.size(), h);
}

inline uint64_t fnv1a_u64(uint64_t v, uint64_t h = kFnvOffset) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    return fnv1a(bytes, 8, h);
}

// SplitMix64 finalizer; spreads the FNV key over the full state space.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t stream_key(uint64_t seed, std::string_view name) {
    return mix64(fnv1a_u64(seed, fnv1a(name)));
}

inline uint64_t stream_key(uint64_t seed, std::string_view name, uint64_t a) {
    return mix64(fnv1a_u64(a, fnv1a_u64(seed, fnv1a(name))));
}

inline uint64_t stream_key(uint64_t seed, std::string_view name, uint64_t a, uint64_t b) {
    return mix64(fnv1a_u64(b, fnv1a_u64(a, fnv1a_u64(seed, fnv1a(name)))));
}

class RandomStream {
  public:
    explicit RandomStream(uint64_t key) : eng_(key) {}
    RandomStream(uint64_t seed, std::string_view name) : eng_(stream_key(seed, name)) {}
    RandomStream(uint64_t seed, std::string_view name, uint64_t a)
        : eng_(stream_key(seed, name, a)) {}
    RandomStream(uint64_t seed, std::string_view name, uint64_t a, uint64_t b)
        : eng_(stream_key(seed, name, a, b)) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds, rejection sampled so the result is unbiased.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t n = static_cast<uint64_t>(hi - lo) + 1;
        if (n == 0) return lo + static_cast<int64_t>(eng_());  // full range
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = eng_();
        while (r >= limit) r = eng_();
        return lo + static_cast<int64_t>(r % n);
    }

    // Box-Muller; draws two uniforms per call.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

  private:
    std::mt19937_64 eng_;
};

}  // namespace rscn

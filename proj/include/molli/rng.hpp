// rng.hpp - seeded counter-based random streams with named substreams.
//
// Every random choice in the toolkit flows from one root seed through named
// child streams ("curves", "phantom", "motion", ...) and per-item splits, so
// output is reproducible and independent of worker count.

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace molli {

// SplitMix64 finalizer.
inline std::uint64_t mix_bits(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

// FNV-1a, used to turn substream names into keys.
inline std::uint64_t hash_name(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix_bits(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double gaussian(double mean, double sd) {
        // Box-Muller; 1 - u keeps the log argument in (0, 1].
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(6.283185307179586476925287 * u2);
    }

    // Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t lim = ~0ULL - ~0ULL % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= lim);
        return v % n;
    }

    // Child streams derive from the current state without consuming it, so
    // sibling splits commute: child(0) and child(1) are the same no matter
    // which is taken first.
    Rng child(std::uint64_t index) const {
        return Rng(mix_bits(state_ ^ mix_bits(index + 0xD1B54A32D192ED03ULL)));
    }
    Rng child(std::string_view name) const { return child(hash_name(name)); }

  private:
    std::uint64_t state_;
};

// Fisher-Yates.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace molli

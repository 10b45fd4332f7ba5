#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace blockmerge {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// Combines two 64-bit values into a well-mixed key. Used to derive
// per-block / per-model / per-tree seeds from one global seed.
inline constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return detail::splitmix64(seed ^ detail::splitmix64(salt));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt) {
    return mix_seed(seed, detail::fnv1a64(salt));
}

inline constexpr double u64_to_unit(std::uint64_t x) {
    // 53 mantissa bits -> [0,1)
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// Counter-based uniform draw in [0,1) keyed by (seed, tensor name, flat
// index). Independent of iteration order and thread count.
inline double counter_uniform(std::uint64_t seed, std::string_view name, std::uint64_t index) {
    std::uint64_t key = detail::splitmix64(seed ^ detail::fnv1a64(name));
    return u64_to_unit(detail::splitmix64(key ^ (index * 0xd6e8feb86659fd93ull)));
}

// Small deterministic stream generator for everything that is not
// keyed per element (bootstrap resampling, candidate pools, fixtures).
// Unlike std::uniform_*_distribution the outputs are pinned across
// platforms and standard-library versions.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    // [0,1)
    double next_unit() { return u64_to_unit(next_u64()); }

    // (0,1]
    double next_unit_open_low() { return 1.0 - next_unit(); }

    // [0,n) without floating-point round-off, via 128-bit multiply-shift.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller (deterministic two-draw form).
    double next_gaussian() {
        double u1 = 1.0 - next_unit();
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace blockmerge

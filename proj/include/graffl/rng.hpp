#pragma once

#include <array>
#include <cstdint>

namespace graffl {

/// SplitMix64 step; used for seeding and for deriving child-stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/**
 * Seedable xoshiro256** stream.
 *
 * The generator and every variate transform built on it are implemented in
 * this library (no std::*_distribution), so a given seed produces the same
 * sequence on every platform and standard library.
 *
 * Streams are single-owner. Parallel work takes `split(i)` children, which
 * are seeded from (parent seed, i) and never alias the parent's state.
 */
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) noexcept;

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept;

    /// Uniform on (0, 1]; safe as a log argument.
    double uniform_open_low() noexcept { return 1.0 - uniform(); }

    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_index(std::uint64_t bound) noexcept;

    /// Independent child stream. Distinct indices give distinct seeds.
    [[nodiscard]] RngStream split(std::uint64_t index) const noexcept;

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
};

}  // namespace graffl

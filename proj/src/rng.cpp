#include "graffl/rng.hpp"

namespace graffl {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed) noexcept : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t RngStream::next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RngStream::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

namespace {
__extension__ using u128 = unsigned __int128;
}  // namespace

std::uint64_t RngStream::uniform_index(std::uint64_t bound) noexcept {
    // Lemire's nearly-divisionless rejection; unbiased.
    auto mul = static_cast<u128>(next_u64()) * bound;
    auto low = static_cast<std::uint64_t>(mul);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            mul = static_cast<u128>(next_u64()) * bound;
            low = static_cast<std::uint64_t>(mul);
        }
    }
    return static_cast<std::uint64_t>(mul >> 64);
}

RngStream RngStream::split(std::uint64_t index) const noexcept {
    std::uint64_t sm = seed_ ^ 0xD1B54A32D192ED03ULL;
    const std::uint64_t a = splitmix64(sm);
    std::uint64_t mix = a + index * 0x9E3779B97F4A7C15ULL;
    const std::uint64_t child = splitmix64(mix) ^ rotl(index + 1, 29);
    return RngStream(child);
}

}  // namespace graffl

#pragma once

// Counter-based random streams.
//
// Every stream is a Philox4x32-10 bijection keyed by a 64-bit key; the
// 128-bit counter is split into a 64-bit stream id (high half) and a
// 64-bit block index (low half). Two streams with different ids never
// share a counter value, so a replication's draws depend only on
// (key, id) and not on which thread or in which order it runs.

#include <array>
#include <cstdint>
#include <limits>

namespace eiv {

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t prod = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(prod >> 32);
    lo = static_cast<std::uint32_t>(prod);
}

// SplitMix64 finalizer; used to derive child keys.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace detail

using PhiloxBlock = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

constexpr PhiloxBlock philox4x32_10(PhiloxBlock ctr, PhiloxKey key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
        detail::mulhilo(detail::kPhiloxM0, ctr[0], hi0, lo0);
        detail::mulhilo(detail::kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += detail::kPhiloxW0;
        key[1] += detail::kPhiloxW1;
    }
    return ctr;
}

// Satisfies UniformRandomBitGenerator, so it plugs into <random>
// distributions.
class RandomStream {
public:
    using result_type = std::uint64_t;

    RandomStream() = default;
    explicit RandomStream(std::uint64_t key, std::uint64_t stream_id = 0)
        : key_(key), stream_(stream_id) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (used_ == 2) {
            refill();
        }
        const std::uint64_t out = (static_cast<std::uint64_t>(buffer_[2 * used_]) << 32) |
                                  buffer_[2 * used_ + 1];
        ++used_;
        return out;
    }

    // Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    // An independent stream addressed by `id`; deterministic in (key, id)
    // and unaffected by how many values this stream has already produced.
    RandomStream split(std::uint64_t id) const {
        return RandomStream(detail::mix64(key_ ^ detail::mix64(stream_ + 0x632BE59BD9B4E019ull)), id);
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t stream_id() const noexcept { return stream_; }

private:
    void refill() {
        const PhiloxBlock ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                              static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
        const PhiloxKey k{static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)};
        buffer_ = philox4x32_10(ctr, k);
        ++block_;
        used_ = 0;
    }

    std::uint64_t key_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t block_ = 0;
    PhiloxBlock buffer_{};
    int used_ = 2;
};

}  // namespace eiv

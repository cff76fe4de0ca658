#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace constrex {

/// SplitMix64 finaliser; used to fold structured identifiers into a 64-bit stream id.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t stream_id(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (auto v : parts) h = mix64(h ^ mix64(v));
    return h;
}

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). The output for a given
/// (key, stream, position) is a pure function of those values, so independent streams can
/// be consumed in any order or on any thread.
class Philox4x32 {
public:
    using result_type = std::uint64_t;

    Philox4x32(std::uint64_t key, std::uint64_t stream)
        : key_{std::uint32_t(key), std::uint32_t(key >> 32)},
          counter_{0u, 0u, std::uint32_t(stream), std::uint32_t(stream >> 32)} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (index_ == 2) {
            refill();
            index_ = 0;
        }
        const auto lo = block_[2 * index_];
        const auto hi = block_[2 * index_ + 1];
        ++index_;
        return (std::uint64_t(hi) << 32) | lo;
    }

private:
    using Block = std::array<std::uint32_t, 4>;
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static Block round(const Block& c, const std::array<std::uint32_t, 2>& k) {
        const std::uint64_t p0 = std::uint64_t(kM0) * c[0];
        const std::uint64_t p1 = std::uint64_t(kM1) * c[2];
        return {std::uint32_t(p1 >> 32) ^ c[1] ^ k[0], std::uint32_t(p1), std::uint32_t(p0 >> 32) ^ c[3] ^ k[1],
                std::uint32_t(p0)};
    }

    void refill() {
        Block c = counter_;
        auto k = key_;
        for (int r = 0; r < 10; ++r) {
            c = round(c, k);
            k[0] += kW0;
            k[1] += kW1;
        }
        block_ = c;
        if (++counter_[0] == 0) ++counter_[1];
    }

    std::array<std::uint32_t, 2> key_;
    Block counter_;
    Block block_{};
    int index_ = 2;
};

}  // namespace constrex

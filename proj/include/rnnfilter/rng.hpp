// Deterministic seeded RNG with independent per-index streams.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace rnnfilter {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Sub-seed derivation. A master seed is split into per-purpose seeds
// ("train-data", "init", "minibatch-order", "test-data", ...) so that e.g.
// changing the test set size never perturbs training:
//   derive_seed(master, tag)        = splitmix64(master ^ fnv1a64(tag))
//   derive_seed(master, tag, index) = splitmix64(derive_seed(master, tag)
//                                       + 0x9e3779b97f4a7c15 * (index + 1))
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
    return splitmix64(master ^ fnv1a64(purpose));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::uint64_t index) {
    return splitmix64(derive_seed(master, purpose) + 0x9e3779b97f4a7c15ULL * (index + 1));
}

// PCG32 (O'Neill). The stream id selects a distinct increment, so streams of
// the same seed are mutually independent; trajectory n always uses stream n,
// which makes parallel generation order-independent.
class Pcg32 {
  public:
    Pcg32(std::uint64_t seed, std::uint64_t stream) {
        inc_ = (stream << 1u) | 1u;
        state_ = 0u;
        next_u32();
        state_ += splitmix64(seed);
        next_u32();
    }

    std::uint32_t next_u32() {
        const std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        const auto rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

  private:
    std::uint64_t state_;
    std::uint64_t inc_;
};

// One stream of uniforms / standard normals. Not thread-safe; use one stream
// per trajectory (or per logical consumer) instead of sharing.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream) : gen_(seed, stream) {}

    std::uint32_t next_u32() { return gen_.next_u32(); }

    // 53-bit uniform in [0, 1)
    double uniform() {
        const std::uint64_t hi = gen_.next_u32();
        const std::uint64_t bits = (hi << 32) | gen_.next_u32();
        return static_cast<double>(bits >> 11) * 0x1.0p-53;
    }

    // uniform in (0, 1]; safe as a log() argument
    double uniform_pos() {
        const std::uint64_t hi = gen_.next_u32();
        const std::uint64_t bits = (hi << 32) | gen_.next_u32();
        return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
    }

    // unbiased integer in [0, n)
    std::uint32_t uniform_below(std::uint32_t n) {
        const std::uint32_t threshold = (-n) % n;
        for (;;) {
            const std::uint32_t r = gen_.next_u32();
            if (r >= threshold) return r % n;
        }
    }

    // N(0,1) via Box-Muller; the second value of each pair is cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
        const double theta = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    Pcg32 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace rnnfilter

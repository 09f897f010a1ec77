#pragma once

#include <cstdint>
#include <limits>

namespace photocorr {

/// SplitMix64 finalizer. Used both as the stream generator and to derive
/// independent stream states from structured keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Lightweight random stream satisfying UniformRandomBitGenerator.
///
/// Streams are cheap to construct, so every shot, bootstrap resample and
/// calibration start gets its own stream derived from a structured key
/// (seed, point, shot, ...). Results therefore do not depend on the order
/// in which independent work items are scheduled.
class RandomStream {
  public:
    using result_type = std::uint64_t;

    explicit constexpr RandomStream(std::uint64_t state) noexcept : state_(state) {}

    /// Stream keyed by a sequence of integers; distinct keys give
    /// statistically independent streams.
    template <class... Keys>
    static constexpr RandomStream derive(std::uint64_t seed, Keys... keys) noexcept {
        std::uint64_t s = mix64(seed ^ 0x6a09e667f3bcc909ULL);
        ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(keys) + 0x9e3779b97f4a7c15ULL))), ...);
        return RandomStream(s);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

  private:
    std::uint64_t state_;
};

// Stream-key tags; keep values stable, they are part of the reproducibility contract.
enum class StreamTag : std::uint64_t {
    shot = 1,
    bootstrap = 2,
};

}  // namespace photocorr

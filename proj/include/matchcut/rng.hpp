#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "matchcut/tensor.hpp"

namespace matchcut {

/// Seeded random source with platform-independent output: std::mt19937_64
/// plus hand-written distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    int below(int n);
    /// Standard normal via Box-Muller.
    double normal();

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// splitmix64 finalizer; combines a seed with a tag into an independent stream seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);

template <class Tag>
Video<Tag> gaussian_video(const VideoShape& shape, std::uint64_t seed) {
    Rng rng(seed);
    Video<Tag> v(shape);
    for (double& x : v.values()) x = rng.normal();
    return v;
}

}  // namespace matchcut

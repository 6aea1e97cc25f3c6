#pragma once

/** @file
 * Reproducible random numbers.
 *
 * The generator is SplitMix64: a 64-bit counter (incremented by the golden
 * gamma 0x9E3779B97F4A7C15) passed through a fixed bit mixer. Seeding with
 * 1234567 yields 6457827717110365317, 3203168211198807973,
 * 9817491932198370423, 4593380528125082431, 16408922859458223821.
 *
 * Normal variates are produced by inversion, one uniform per draw, so every
 * consumer can state its draw budget per time step.
 */

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>

namespace hmmic {

/// Stateless SplitMix64 finalizer.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t golden_gamma = 0x9E3779B97F4A7C15ULL;

/// Child seed for stream `index` of `master`; used for replications and
/// for the independent filter runs inside one fit.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64_mix(master + golden_gamma * (index + 1)) ^
           splitmix64_mix(index ^ 0x5851F42D4C957F2DULL);
}

class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t operator()() noexcept {
        state_ += golden_gamma;
        return splitmix64_mix(state_);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform() noexcept {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() { return standard_normal_quantile(uniform()); }

    static double standard_normal_quantile(double u) {
        return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
    }

private:
    std::uint64_t state_;
};

}  // namespace hmmic

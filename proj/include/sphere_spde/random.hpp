#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>

#include "sphere_spde/numeric.hpp"

namespace sphere_spde {

/// Philox4x32-10 block cipher (Salmon et al., "Parallel random numbers: as
/// easy as 1, 2, 3"). Stateless: output is a pure function of counter and key.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    [[nodiscard]] static constexpr Counter generate(Counter counter, Key key) noexcept
    {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * counter[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * counter[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
        }
        return counter;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// SplitMix64 finaliser; used to derive independent per-sample seeds.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seed of the i-th independent replica of an experiment seeded with `base`.
[[nodiscard]] constexpr std::uint64_t replica_seed(std::uint64_t base, std::uint64_t replica) noexcept
{
    return mix64(base ^ mix64(replica + 0x632BE59BD9B4E019ull));
}

/// Disjoint substreams for the different consumers of randomness.
enum class Stream : std::uint32_t {
    brownian_increment = 0,
    exact_transition = 1,
    bridge_residual = 2,
    initial_condition = 3,
};

/// Counter-based standard-normal stream addressed by (seed, stream, channel, index).
/// Each Philox block yields one Box-Muller pair, so indices 2i and 2i+1 share
/// a block. Values never depend on the order in which they are requested.
class NormalStream {
public:
    constexpr NormalStream(std::uint64_t seed, Stream stream, std::uint64_t channel) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          channel_(static_cast<std::uint32_t>(channel)),
          stream_(static_cast<std::uint32_t>(stream) ^ (static_cast<std::uint32_t>(channel >> 32) << 8))
    {
    }

    /// Normals with indices 2*pair and 2*pair+1.
    [[nodiscard]] std::array<double, 2> pair(std::uint64_t pair_index) const noexcept
    {
        const auto block = Philox4x32::generate(
            {static_cast<std::uint32_t>(pair_index), static_cast<std::uint32_t>(pair_index >> 32),
             channel_, stream_},
            key_);
        const std::uint64_t a = (std::uint64_t{block[0]} << 32) | block[1];
        const std::uint64_t b = (std::uint64_t{block[2]} << 32) | block[3];
        // u1 in (0, 1], u2 in [0, 1)
        const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * numeric::pi * u2;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }

    [[nodiscard]] double operator()(std::uint64_t index) const noexcept
    {
        return pair(index / 2)[index % 2];
    }

    /// Writes normals with indices [0, out.size()).
    void fill(std::span<double> out) const noexcept
    {
        const std::size_t n = out.size();
        std::size_t i = 0;
        for (; i + 1 < n; i += 2) {
            const auto z = pair(i / 2);
            out[i] = z[0];
            out[i + 1] = z[1];
        }
        if (i < n) {
            out[i] = pair(i / 2)[0];
        }
    }

private:
    Philox4x32::Key key_;
    std::uint32_t channel_;
    std::uint32_t stream_;
};

} // namespace sphere_spde

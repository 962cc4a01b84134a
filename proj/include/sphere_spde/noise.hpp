#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sphere_spde/error.hpp"
#include "sphere_spde/harmonics.hpp"
#include "sphere_spde/numeric.hpp"
#include "sphere_spde/parallel.hpp"
#include "sphere_spde/random.hpp"

namespace sphere_spde {

/// Angular power spectrum l -> A_l of an isotropic Q-Wiener process:
/// A_0 configurable, A_l = C l^{-alpha} for l >= 1, optionally band-limited
/// to l <= cutoff.
class AngularPowerSpectrum {
public:
    AngularPowerSpectrum(double decay, double scale = 1.0, double zero_mode = 0.0,
                         std::optional<int> cutoff = std::nullopt)
        : decay_(decay), scale_(scale), zero_mode_(zero_mode), cutoff_(cutoff)
    {
        if (!(decay > 0.0)) {
            throw DomainError("AngularPowerSpectrum: decay exponent must be positive");
        }
        if (!(scale >= 0.0) || !(zero_mode >= 0.0)) {
            throw DomainError("AngularPowerSpectrum: scale and zero-mode power must be nonnegative");
        }
        if (cutoff && *cutoff < 0) {
            throw DomainError("AngularPowerSpectrum: negative cutoff");
        }
    }

    /// A_l = 0 for every l.
    [[nodiscard]] static AngularPowerSpectrum silent() { return {1.0, 0.0, 0.0}; }

    [[nodiscard]] double decay() const noexcept { return decay_; }
    [[nodiscard]] double scale() const noexcept { return scale_; }
    [[nodiscard]] double zero_mode() const noexcept { return zero_mode_; }
    [[nodiscard]] std::optional<int> cutoff() const noexcept { return cutoff_; }

    [[nodiscard]] double power(int degree) const
    {
        if (degree < 0) {
            throw DomainError("AngularPowerSpectrum::power: negative degree");
        }
        if (degree == 0) {
            return zero_mode_;
        }
        if (cutoff_ && degree > *cutoff_) {
            return 0.0;
        }
        return scale_ * std::pow(static_cast<double>(degree), -decay_);
    }

    /// Variance rate of one real channel: A_l for X_{l,0}, A_l / 2 for the
    /// Re/Im channels.
    [[nodiscard]] double channel_intensity(std::size_t channel) const
    {
        const int l = channel_degree(channel);
        const double a = power(l);
        return channel == block_offset(l) ? a : 0.5 * a;
    }

private:
    double decay_;
    double scale_;
    double zero_mode_;
    std::optional<int> cutoff_;
};

[[nodiscard]] inline double power(const AngularPowerSpectrum& spectrum, int degree)
{
    return spectrum.power(degree);
}

/// Partial trace sum_{l<=kappa} (2l+1) A_l (1 + l(l+1))^s.
[[nodiscard]] inline double trace_sobolev(const AngularPowerSpectrum& spectrum, double s, int kappa)
{
    CompensatedSum total;
    for (int l = 0; l <= kappa; ++l) {
        total += (2.0 * l + 1.0) * spectrum.power(l) * std::pow(1.0 + decay_rate(l), s);
    }
    return total.value();
}

/// Channel-major Brownian increments on the dyadic grid T 2^{-level}.
struct IncrementTable {
    int kappa = 0;
    int level = 0;
    double horizon = 1.0;
    std::vector<double> data;

    [[nodiscard]] std::size_t channels() const noexcept { return channel_count(kappa); }
    [[nodiscard]] std::size_t steps() const noexcept { return std::size_t{1} << level; }
    [[nodiscard]] double step() const noexcept { return std::ldexp(horizon, -level); }

    [[nodiscard]] std::span<const double> channel(std::size_t c) const
    {
        return std::span<const double>(data).subspan(c * steps(), steps());
    }
    [[nodiscard]] std::span<double> channel(std::size_t c)
    {
        return std::span<double>(data).subspan(c * steps(), steps());
    }
};

struct LatticeOptions {
    std::size_t memory_budget_bytes = std::size_t{1} << 30;
    int threads = 1;
};

/// Per-channel standard Brownian increments at the finest dyadic level M.
/// Coarser levels are views computed by aggregate(); nothing else is stored.
class BrownianLattice {
public:
    BrownianLattice(IncrementTable fine, std::uint64_t seed)
        : fine_(std::move(fine)), seed_(seed)
    {
        if (fine_.data.size() != fine_.channels() * fine_.steps()) {
            throw DomainError("BrownianLattice: data size does not match channels * 2^M");
        }
    }

    [[nodiscard]] int kappa() const noexcept { return fine_.kappa; }
    [[nodiscard]] int finest_level() const noexcept { return fine_.level; }
    [[nodiscard]] double horizon() const noexcept { return fine_.horizon; }
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] double finest_step() const noexcept { return fine_.step(); }
    [[nodiscard]] const IncrementTable& fine() const noexcept { return fine_; }

    friend bool operator==(const BrownianLattice& a, const BrownianLattice& b)
    {
        return a.seed_ == b.seed_ && a.fine_.kappa == b.fine_.kappa &&
               a.fine_.level == b.fine_.level && a.fine_.horizon == b.fine_.horizon &&
               a.fine_.data == b.fine_.data;
    }

private:
    IncrementTable fine_;
    std::uint64_t seed_;
};

[[nodiscard]] inline std::size_t lattice_bytes(int kappa, int level)
{
    return channel_count(kappa) * (std::size_t{1} << level) * sizeof(double);
}

/// Samples sqrt(h_min) Z for every channel l <= kappa and fine step, with Z
/// drawn from the counter stream (seed, channel, step).
[[nodiscard]] inline BrownianLattice sample_lattice(int kappa, double horizon, int finest_level,
                                                    std::uint64_t seed,
                                                    const LatticeOptions& options = {})
{
    if (kappa < 0 || finest_level < 0 || !(horizon > 0.0)) {
        throw DomainError("sample_lattice: need kappa >= 0, M >= 0, T > 0");
    }
    if (finest_level > 40) {
        throw ResourceError("sample_lattice: finest level beyond 2^40 steps");
    }
    const std::size_t bytes = lattice_bytes(kappa, finest_level);
    if (bytes > options.memory_budget_bytes) {
        throw ResourceError("sample_lattice: lattice needs " + std::to_string(bytes) +
                            " bytes, budget is " + std::to_string(options.memory_budget_bytes));
    }
    IncrementTable table{kappa, finest_level, horizon, {}};
    table.data.resize(table.channels() * table.steps());
    const double scale = std::sqrt(table.step());
    parallel_for(table.channels(), options.threads, [&](std::size_t c) {
        auto out = table.channel(c);
        NormalStream(seed, Stream::brownian_increment, c).fill(out);
        for (double& v : out) {
            v *= scale;
        }
    });
    return BrownianLattice(std::move(table), seed);
}

/// Coarsens a table to `level` by repeated pairwise summation of neighbours,
/// so aggregating in one go or through intermediate levels is bit-identical.
[[nodiscard]] inline IncrementTable aggregate(const IncrementTable& table, int level)
{
    if (level < 0 || level > table.level) {
        throw DomainError("aggregate: level " + std::to_string(level) + " outside [0, " +
                          std::to_string(table.level) + "]");
    }
    if (level == table.level) {
        return table;
    }
    auto halve = [](const IncrementTable& source) {
        IncrementTable coarser{source.kappa, source.level - 1, source.horizon, {}};
        coarser.data.resize(coarser.channels() * coarser.steps());
        for (std::size_t c = 0; c < source.channels(); ++c) {
            const auto fine = source.channel(c);
            auto coarse = coarser.channel(c);
            for (std::size_t i = 0; i < coarse.size(); ++i) {
                coarse[i] = fine[2 * i] + fine[2 * i + 1];
            }
        }
        return coarser;
    };
    IncrementTable current = halve(table);
    while (current.level > level) {
        current = halve(current);
    }
    return current;
}

[[nodiscard]] inline IncrementTable aggregate(const BrownianLattice& lattice, int level)
{
    return aggregate(lattice.fine(), level);
}

// Binary lattice format: u64 kappa, f64 T, u64 M, u64 seed, then
// (kappa+1)^2 * 2^M float64 increments, channel-major. All little-endian.

namespace detail {
inline void write_u64_le(std::ostream& out, std::uint64_t v)
{
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    }
    out.write(bytes, 8);
}
inline std::uint64_t read_u64_le(std::istream& in)
{
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
        throw ConfigError("lattice file truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= std::uint64_t{bytes[i]} << (8 * i);
    }
    return v;
}
} // namespace detail

inline void save_lattice(std::ostream& out, const BrownianLattice& lattice)
{
    detail::write_u64_le(out, static_cast<std::uint64_t>(lattice.kappa()));
    detail::write_u64_le(out, std::bit_cast<std::uint64_t>(lattice.horizon()));
    detail::write_u64_le(out, static_cast<std::uint64_t>(lattice.finest_level()));
    detail::write_u64_le(out, lattice.seed());
    for (double v : lattice.fine().data) {
        detail::write_u64_le(out, std::bit_cast<std::uint64_t>(v));
    }
}

[[nodiscard]] inline BrownianLattice load_lattice(std::istream& in,
                                                  const LatticeOptions& options = {})
{
    const auto kappa = detail::read_u64_le(in);
    const double horizon = std::bit_cast<double>(detail::read_u64_le(in));
    const auto level = detail::read_u64_le(in);
    const auto seed = detail::read_u64_le(in);
    if (kappa > 1u << 16 || level > 40 || !(horizon > 0.0)) {
        throw ConfigError("lattice file header is invalid");
    }
    if (lattice_bytes(static_cast<int>(kappa), static_cast<int>(level)) > options.memory_budget_bytes) {
        throw ResourceError("load_lattice: lattice exceeds memory budget");
    }
    IncrementTable table{static_cast<int>(kappa), static_cast<int>(level), horizon, {}};
    table.data.resize(table.channels() * table.steps());
    for (double& v : table.data) {
        v = std::bit_cast<double>(detail::read_u64_le(in));
    }
    return BrownianLattice(std::move(table), seed);
}

} // namespace sphere_spde

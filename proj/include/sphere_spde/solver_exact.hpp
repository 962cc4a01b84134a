#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sphere_spde/error.hpp"
#include "sphere_spde/harmonics.hpp"
#include "sphere_spde/noise.hpp"
#include "sphere_spde/numeric.hpp"
#include "sphere_spde/parallel.hpp"
#include "sphere_spde/random.hpp"

namespace sphere_spde {

/// Solution snapshots at increasing times.
struct Trajectory {
    std::vector<double> times;
    std::vector<CoefficientField> states;
};

/// One real Ornstein-Uhlenbeck channel dx = -rate x dt + sqrt(intensity) dbeta.
struct OuMode {
    double rate = 0.0;
    double intensity = 0.0;

    // Beyond this rate*h the decay factor is flushed to zero.
    static constexpr double flush_threshold = 700.0;

    [[nodiscard]] double mean_factor(double h) const noexcept
    {
        const double x = rate * h;
        return x > flush_threshold ? 0.0 : std::exp(-x);
    }

    /// intensity (1 - e^{-2 rate h}) / (2 rate), limit intensity h at rate 0.
    [[nodiscard]] double transition_variance(double h) const noexcept
    {
        const double x = rate * h;
        if (x > flush_threshold) {
            return intensity / (2.0 * rate);
        }
        return intensity * h * numeric::one_minus_exp_ratio(2.0 * x);
    }
};

/// Exact transition over a step h given a standard normal draw z.
[[nodiscard]] inline double ou_exact_step(const OuMode& mode, double x, double h, double z)
{
    if (!(h > 0.0)) {
        throw DomainError("ou_exact_step: step must be positive");
    }
    return mode.mean_factor(h) * x + std::sqrt(mode.transition_variance(h)) * z;
}

[[nodiscard]] inline OuMode channel_mode(const AngularPowerSpectrum& spectrum, std::size_t channel)
{
    return {decay_rate(channel_degree(channel)), spectrum.channel_intensity(channel)};
}

/// Exactly distributed truncated solution X^(kappa) at the requested times.
/// Every channel uses its own counter stream, so output does not depend on
/// thread count. Not pathwise coupled to any Brownian lattice.
[[nodiscard]] inline Trajectory spectral_solve(const CoefficientField& initial,
                                               const AngularPowerSpectrum& spectrum, int kappa,
                                               std::span<const double> times, std::uint64_t seed,
                                               int threads = 1)
{
    if (kappa < 0) {
        throw DomainError("spectral_solve: negative truncation");
    }
    double previous = 0.0;
    for (double t : times) {
        if (!(t >= previous) || (t == previous && t != 0.0)) {
            throw DomainError("spectral_solve: times must be nonnegative and increasing");
        }
        previous = t;
    }
    const CoefficientField start = initial.resized(kappa);
    Trajectory out;
    out.times.assign(times.begin(), times.end());
    out.states.assign(times.size(), CoefficientField(kappa));
    parallel_for(start.size(), threads, [&](std::size_t c) {
        const OuMode mode = channel_mode(spectrum, c);
        const NormalStream normals(seed, Stream::exact_transition, c);
        double x = start[c];
        double t_prev = 0.0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            const double h = times[i] - t_prev;
            if (h > 0.0) {
                x = ou_exact_step(mode, x, h, normals(i));
            }
            out.states[i][c] = x;
            t_prev = times[i];
        }
    });
    return out;
}

/// Per-degree weights expressing the stochastic convolution at the horizon in
/// terms of the fine increments: X(T) = e^{-rate T} x0 + sqrt(I) (sum_i w_i dB_i
/// + sqrt(R) Z), where Z is independent of the lattice.
struct BridgeWeights {
    std::vector<double> increment_weights;
    double residual_variance = 0.0;
};

[[nodiscard]] inline BridgeWeights bridge_weights(double rate, double fine_step, std::size_t steps)
{
    BridgeWeights out;
    out.increment_weights.resize(steps);
    const double x = rate * fine_step;
    const double conditional = numeric::one_minus_exp_ratio(x);
    const double residual = fine_step * numeric::bridge_residual_factor(x);
    CompensatedSum residual_sum;
    for (std::size_t i = 0; i < steps; ++i) {
        // distance from the right end of fine step i to the horizon
        const double lag = rate * fine_step * static_cast<double>(steps - 1 - i);
        const double decay = lag > OuMode::flush_threshold ? 0.0 : std::exp(-lag);
        out.increment_weights[i] = decay * conditional;
        residual_sum += decay * decay * residual;
    }
    out.residual_variance = residual_sum.value();
    return out;
}

/// Terminal value of the exact truncated solution, pathwise coupled to the
/// lattice: the Brownian path between fine grid points is filled in by its
/// conditional law, using the bridge_residual stream for the extra draw.
[[nodiscard]] inline CoefficientField exact_terminal_coupled(const CoefficientField& initial,
                                                             const AngularPowerSpectrum& spectrum,
                                                             int kappa, const BrownianLattice& lattice,
                                                             std::span<const BridgeWeights> weights = {})
{
    if (kappa < 0 || lattice.kappa() < kappa) {
        throw DomainError("exact_terminal_coupled: lattice truncation below kappa");
    }
    const IncrementTable& fine = lattice.fine();
    std::vector<BridgeWeights> local;
    if (weights.empty()) {
        for (int l = 0; l <= kappa; ++l) {
            local.push_back(bridge_weights(decay_rate(l), fine.step(), fine.steps()));
        }
        weights = local;
    }
    if (weights.size() < static_cast<std::size_t>(kappa + 1)) {
        throw DomainError("exact_terminal_coupled: missing bridge weights");
    }
    const CoefficientField start = initial.resized(kappa);
    CoefficientField out(kappa);
    for (std::size_t c = 0; c < out.size(); ++c) {
        const int l = channel_degree(c);
        const OuMode mode = channel_mode(spectrum, c);
        const BridgeWeights& w = weights[static_cast<std::size_t>(l)];
        const auto increments = fine.channel(c);
        double convolution = 0.0;
        for (std::size_t i = 0; i < increments.size(); ++i) {
            convolution += w.increment_weights[i] * increments[i];
        }
        const double z = NormalStream(lattice.seed(), Stream::bridge_residual, c)(0);
        convolution += std::sqrt(w.residual_variance) * z;
        out[c] = mode.mean_factor(fine.horizon) * start[c] + std::sqrt(mode.intensity) * convolution;
    }
    return out;
}

} // namespace sphere_spde

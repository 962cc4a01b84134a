#pragma once

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "sphere_spde/error.hpp"
#include "sphere_spde/harmonics.hpp"
#include "sphere_spde/noise.hpp"
#include "sphere_spde/numeric.hpp"
#include "sphere_spde/parallel.hpp"
#include "sphere_spde/solver_exact.hpp"

namespace sphere_spde {

enum class SchemeKind { forward, backward };

[[nodiscard]] inline const char* to_string(SchemeKind kind) noexcept
{
    return kind == SchemeKind::forward ? "forward" : "backward";
}

/// Euler-Maruyama time stepper. The step factor xi approximates e^{-rate h}:
/// 1 - rate h (forward) or 1/(1 + rate h) (backward). The noise increment is
/// multiplied by xi^delta with delta = 0 (forward) or 1 (backward).
///
/// `admissibility` is C_c in the forward gate kappa(kappa+1) h <= C_c. The
/// default 2 is the spectral-radius bound |1 - rate h| <= 1; strict_forward() uses 1.
struct Scheme {
    SchemeKind kind = SchemeKind::backward;
    double admissibility = 2.0;

    [[nodiscard]] static constexpr Scheme forward(double admissibility = 2.0) noexcept
    {
        return {SchemeKind::forward, admissibility};
    }
    [[nodiscard]] static constexpr Scheme strict_forward() noexcept { return {SchemeKind::forward, 1.0}; }
    [[nodiscard]] static constexpr Scheme backward() noexcept { return {SchemeKind::backward, 2.0}; }
    /// Forward scheme with the gate disabled; used to demonstrate instability.
    [[nodiscard]] static constexpr Scheme unchecked_forward() noexcept
    {
        return {SchemeKind::forward, std::numeric_limits<double>::infinity()};
    }

    [[nodiscard]] constexpr int delta() const noexcept { return kind == SchemeKind::forward ? 0 : 1; }

    [[nodiscard]] constexpr double step_factor(double rate, double h) const noexcept
    {
        return kind == SchemeKind::forward ? 1.0 - rate * h : 1.0 / (1.0 + rate * h);
    }

    [[nodiscard]] double noise_factor(double rate, double h) const noexcept
    {
        return kind == SchemeKind::forward ? 1.0 : step_factor(rate, h);
    }

    friend constexpr bool operator==(const Scheme&, const Scheme&) = default;
};

/// xi(rate, h)^n. Goes through log1p so that xi close to 1 keeps its full
/// relative accuracy; n must be integral when the forward factor is negative.
[[nodiscard]] inline double factor_power(const Scheme& scheme, double rate, double h, double n)
{
    if (n == 0.0) {
        return 1.0;
    }
    const double x = rate * h;
    if (scheme.kind == SchemeKind::backward) {
        return std::exp(-n * std::log1p(x));
    }
    if (x < 1.0) {
        return std::exp(n * std::log1p(-x));
    }
    return std::pow(1.0 - x, n);
}

/// e^{-rate h n} - xi^n without the cancellation of the naive difference
/// when rate h is small.
[[nodiscard]] inline double exp_factor_power_difference(const Scheme& scheme, double rate, double h,
                                                        double n)
{
    const double x = rate * h;
    if (n == 0.0 || x == 0.0) {
        return 0.0;
    }
    const double exact = std::exp(-x * n);
    if (x * n > 700.0 || (scheme.kind == SchemeKind::forward && x >= 1.0)) {
        return exact - factor_power(scheme, rate, h, n);
    }
    if (scheme.kind == SchemeKind::forward) {
        // xi^n = e^{-xn} e^{n (log(1-x) + x)}
        return -exact * std::expm1(n * numeric::log1p_minus_identity(-x));
    }
    // xi^n = e^{-xn} e^{-n (log(1+x) - x)}
    return -exact * std::expm1(-n * numeric::log1p_minus_identity(x));
}

struct StabilityReport {
    bool ok = true;
    double product = 0.0; ///< kappa (kappa + 1) h
    double limit = 0.0;   ///< C_c, infinite for the backward scheme
    std::string message;

    explicit operator bool() const noexcept { return ok; }
};

[[nodiscard]] inline StabilityReport stability_check(const Scheme& scheme, int kappa, double h)
{
    StabilityReport report;
    report.product = decay_rate(kappa) * h;
    if (scheme.kind == SchemeKind::backward) {
        report.limit = std::numeric_limits<double>::infinity();
        return report;
    }
    report.limit = scheme.admissibility;
    if (!(report.product <= scheme.admissibility)) {
        report.ok = false;
        std::ostringstream msg;
        msg << "forward Euler unstable: kappa(kappa+1)h = " << report.product
            << " exceeds C_c = " << scheme.admissibility << " (kappa = " << kappa << ", h = " << h
            << ")";
        report.message = msg.str();
    }
    return report;
}

inline void require_stable(const Scheme& scheme, int kappa, double h)
{
    const StabilityReport report = stability_check(scheme, kappa, h);
    if (!report) {
        throw StabilityError(report.message);
    }
}

/// One step xi x + xi^delta sqrt(intensity) dbeta of size h.
[[nodiscard]] inline double em_step(const Scheme& scheme, double rate, double h, double intensity,
                                    double x, double increment)
{
    if (scheme.kind == SchemeKind::forward && !(rate * h <= scheme.admissibility)) {
        throw StabilityError("em_step: forward step with rate*h above C_c");
    }
    return scheme.step_factor(rate, h) * x +
           scheme.noise_factor(rate, h) * std::sqrt(intensity) * increment;
}

namespace detail {
inline void check_em_inputs(const Scheme& scheme, int kappa, const IncrementTable& increments)
{
    if (kappa < 0 || increments.kappa < kappa) {
        throw DomainError("em_solve: increment table truncation " +
                          std::to_string(increments.kappa) + " below kappa " +
                          std::to_string(kappa));
    }
    require_stable(scheme, kappa, increments.step());
}
} // namespace detail

/// Full trajectory of the EM scheme on the grid of `increments`
/// (t_k = k T 2^{-level}, k = 0..2^level).
[[nodiscard]] inline Trajectory em_solve(const Scheme& scheme, const CoefficientField& initial,
                                         const AngularPowerSpectrum& spectrum, int kappa,
                                         const IncrementTable& increments, int threads = 1)
{
    detail::check_em_inputs(scheme, kappa, increments);
    const std::size_t steps = increments.steps();
    const double h = increments.step();
    Trajectory out;
    out.times.resize(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) {
        out.times[k] = h * static_cast<double>(k);
    }
    out.states.assign(steps + 1, CoefficientField(kappa));
    const CoefficientField start = initial.resized(kappa);
    parallel_for(start.size(), threads, [&](std::size_t c) {
        const double rate = decay_rate(channel_degree(c));
        const double xi = scheme.step_factor(rate, h);
        const double noise = scheme.noise_factor(rate, h) * std::sqrt(spectrum.channel_intensity(c));
        const auto db = increments.channel(c);
        double x = start[c];
        out.states[0][c] = x;
        for (std::size_t k = 0; k < steps; ++k) {
            x = xi * x + noise * db[k];
            out.states[k + 1][c] = x;
        }
    });
    return out;
}

/// Lattice front end: runs on aggregate(lattice, level).
[[nodiscard]] inline Trajectory em_solve(const Scheme& scheme, const CoefficientField& initial,
                                         const AngularPowerSpectrum& spectrum, int kappa, int level,
                                         const BrownianLattice& lattice, int threads = 1)
{
    if (level < 0 || level > lattice.finest_level()) {
        throw DomainError("em_solve: level outside the lattice");
    }
    return em_solve(scheme, initial, spectrum, kappa, aggregate(lattice, level), threads);
}

/// Terminal value only; keeps a single field in memory.
[[nodiscard]] inline CoefficientField em_terminal(const Scheme& scheme, const CoefficientField& initial,
                                                  const AngularPowerSpectrum& spectrum, int kappa,
                                                  const IncrementTable& increments)
{
    detail::check_em_inputs(scheme, kappa, increments);
    const std::size_t steps = increments.steps();
    const double h = increments.step();
    CoefficientField x = initial.resized(kappa);
    for (std::size_t c = 0; c < x.size(); ++c) {
        const double rate = decay_rate(channel_degree(c));
        const double xi = scheme.step_factor(rate, h);
        const double noise = scheme.noise_factor(rate, h) * std::sqrt(spectrum.channel_intensity(c));
        const auto db = increments.channel(c);
        double v = x[c];
        for (std::size_t k = 0; k < steps; ++k) {
            v = xi * v + noise * db[k];
        }
        x[c] = v;
    }
    return x;
}

} // namespace sphere_spde

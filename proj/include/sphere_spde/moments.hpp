#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "sphere_spde/error.hpp"
#include "sphere_spde/harmonics.hpp"
#include "sphere_spde/noise.hpp"
#include "sphere_spde/numeric.hpp"
#include "sphere_spde/solver_em.hpp"

// Closed-form first and second moments. Second-moment inputs are fields of
// per-channel E|X0_c|^2 over the real channel layout; the L2 norm weights
// each Re/Im channel twice (Parseval over the +-m pair).

namespace sphere_spde {

namespace detail {

inline void check_time(double t, const char* who)
{
    if (!(t >= 0.0)) {
        throw DomainError(std::string(who) + ": time must be nonnegative");
    }
}

inline void check_step(double h, std::int64_t k, const char* who)
{
    if (!(h > 0.0) || k < 0) {
        throw DomainError(std::string(who) + ": need h > 0 and k >= 0");
    }
}

/// sum over the degree-l block of channel_weight(c) * f[c]; 0 beyond f's truncation.
inline double weighted_block_sum(const CoefficientField& f, int l)
{
    if (l > f.truncation()) {
        return 0.0;
    }
    const auto block = f.block(l);
    double sum = block[0];
    for (std::size_t i = 1; i < block.size(); ++i) {
        sum += 2.0 * block[i];
    }
    return sum;
}

/// Variance of the stochastic convolution of one unit-intensity channel at
/// time t: (1 - e^{-2 rate t}) / (2 rate), limit t at rate 0.
inline double convolution_variance(double rate, double t)
{
    const double x = 2.0 * rate * t;
    if (x > 1400.0) {
        return 1.0 / (2.0 * rate);
    }
    return t * numeric::one_minus_exp_ratio(x);
}

} // namespace detail

/// h * sum_{j=1}^{k} xi^{2(k-j+delta)}, the EM counterpart of convolution_variance.
[[nodiscard]] inline double em_noise_sum(const Scheme& scheme, double rate, double h, std::int64_t k)
{
    detail::check_step(h, k, "em_noise_sum");
    if (k == 0) {
        return 0.0;
    }
    const double x = rate * h;
    const double kd = static_cast<double>(k);
    const double lead = scheme.delta() == 1 ? factor_power(scheme, rate, h, 2.0) : 1.0;
    if (x == 0.0) {
        return h * lead * kd;
    }
    // sum_{n<k} r^n with r = xi^2, as (1 - r^k) / (1 - r) through log r
    double log_r = 0.0;
    if (scheme.kind == SchemeKind::forward) {
        if (x == 1.0) {
            return h; // r = 0, only n = 0 survives
        }
        log_r = x < 1.0 ? 2.0 * std::log1p(-x) : 2.0 * std::log(x - 1.0);
    } else {
        log_r = -2.0 * std::log1p(x);
    }
    if (log_r == 0.0) {
        return h * lead * kd;
    }
    const double one_minus_r = -std::expm1(log_r);
    const double one_minus_rk = -std::expm1(kd * log_r);
    return h * lead * one_minus_rk / one_minus_r;
}

[[nodiscard]] inline CoefficientField exact_expectation(const CoefficientField& mean, double t)
{
    detail::check_time(t, "exact_expectation");
    CoefficientField out = mean;
    for (int l = 0; l <= out.truncation(); ++l) {
        const double decay = std::exp(-decay_rate(l) * t);
        for (double& v : out.block(l)) {
            v *= decay;
        }
    }
    return out;
}

[[nodiscard]] inline CoefficientField spectral_expectation(const CoefficientField& mean, int kappa,
                                                           double t)
{
    return exact_expectation(mean.resized(kappa), t);
}

/// E||X^(kappa)(t)||^2 for the spectral truncation at kappa.
[[nodiscard]] inline double spectral_second_moment(const CoefficientField& initial_msq,
                                                   const AngularPowerSpectrum& spectrum, int kappa,
                                                   double t)
{
    detail::check_time(t, "spectral_second_moment");
    if (kappa < 0) {
        throw DomainError("spectral_second_moment: negative truncation");
    }
    CompensatedSum total;
    for (int l = 0; l <= kappa; ++l) {
        const double rate = decay_rate(l);
        const double deterministic = detail::weighted_block_sum(initial_msq, l);
        if (deterministic != 0.0) {
            total += std::exp(-2.0 * rate * t) * deterministic;
        }
        total += spectrum.power(l) * (2.0 * l + 1.0) * detail::convolution_variance(rate, t);
    }
    return total.value();
}

/// The exact solution's second moment, with the degree series summed up to kappa.
[[nodiscard]] inline double exact_second_moment(const CoefficientField& initial_msq,
                                                const AngularPowerSpectrum& spectrum, int kappa,
                                                double t)
{
    return spectral_second_moment(initial_msq, spectrum, kappa, t);
}

[[nodiscard]] inline CoefficientField em_expectation(const Scheme& scheme, const CoefficientField& mean,
                                                     int kappa, double h, std::int64_t k)
{
    detail::check_step(h, k, "em_expectation");
    require_stable(scheme, kappa, h);
    CoefficientField out = mean.resized(kappa);
    for (int l = 0; l <= kappa; ++l) {
        const double factor = factor_power(scheme, decay_rate(l), h, static_cast<double>(k));
        for (double& v : out.block(l)) {
            v *= factor;
        }
    }
    return out;
}

[[nodiscard]] inline double em_second_moment(const Scheme& scheme, const CoefficientField& initial_msq,
                                             const AngularPowerSpectrum& spectrum, int kappa, double h,
                                             std::int64_t k)
{
    detail::check_step(h, k, "em_second_moment");
    require_stable(scheme, kappa, h);
    CompensatedSum total;
    for (int l = 0; l <= kappa; ++l) {
        const double rate = decay_rate(l);
        const double deterministic = detail::weighted_block_sum(initial_msq, l);
        if (deterministic != 0.0) {
            total += factor_power(scheme, rate, h, 2.0 * static_cast<double>(k)) * deterministic;
        }
        total += spectrum.power(l) * (2.0 * l + 1.0) * em_noise_sum(scheme, rate, h, k);
    }
    return total.value();
}

} // namespace sphere_spde

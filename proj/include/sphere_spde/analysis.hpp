#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sphere_spde/error.hpp"
#include "sphere_spde/harmonics.hpp"
#include "sphere_spde/moments.hpp"
#include "sphere_spde/noise.hpp"
#include "sphere_spde/numeric.hpp"
#include "sphere_spde/parallel.hpp"
#include "sphere_spde/random.hpp"
#include "sphere_spde/solver_em.hpp"
#include "sphere_spde/solver_exact.hpp"

namespace sphere_spde {

// ---------------------------------------------------------------------------
// Rate fitting

struct LogLogFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> excluded; ///< indices with error <= 0 or non-finite
};

namespace detail {
inline bool usable_point(double x, double y)
{
    return x > 0.0 && y > 0.0 && std::isfinite(x) && std::isfinite(y);
}

// Least squares in log2-log2 coordinates over the usable points of the first
// `count` entries. Returns NaNs if fewer than two usable points remain.
inline LogLogFit least_squares_log2(std::span<const double> x, std::span<const double> y,
                                    std::size_t count)
{
    LogLogFit fit;
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < count; ++i) {
        if (!usable_point(x[i], y[i])) {
            fit.excluded.push_back(i);
            continue;
        }
        sx += std::log2(x[i]);
        sy += std::log2(y[i]);
        ++n;
    }
    if (n < 2) {
        return fit;
    }
    const double mx = sx / static_cast<double>(n);
    const double my = sy / static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        if (!usable_point(x[i], y[i])) {
            continue;
        }
        const double dx = std::log2(x[i]) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log2(y[i]) - my);
    }
    if (sxx == 0.0) {
        return fit;
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}
} // namespace detail

/// Least-squares line through (log2 x, log2 y). Points with y <= 0 are
/// excluded and reported; fewer than three usable points is an error.
[[nodiscard]] inline LogLogFit fit_loglog(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) {
        throw DegenerateInput("fit_loglog: abscissae and errors differ in length");
    }
    std::size_t usable = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        usable += detail::usable_point(x[i], y[i]) ? 1 : 0;
    }
    if (usable < 3) {
        throw DegenerateInput("fit_loglog: need at least 3 positive points, have " +
                              std::to_string(usable));
    }
    LogLogFit fit = detail::least_squares_log2(x, y, x.size());
    if (std::isnan(fit.slope)) {
        throw DegenerateInput("fit_loglog: abscissae are all equal");
    }
    return fit;
}

/// One convergence curve: errors against a dyadic sweep parameter (kappa or h).
struct ErrorCurve {
    std::string label;
    std::string sweep_param;
    std::vector<double> abscissae;
    std::vector<double> errors;
    std::vector<double> stderrs; ///< NaN entries for closed-form points
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> excluded;

    void push(double x, double error, double stderr_value = std::numeric_limits<double>::quiet_NaN())
    {
        abscissae.push_back(x);
        errors.push_back(error);
        stderrs.push_back(stderr_value);
    }

    [[nodiscard]] std::size_t size() const noexcept { return abscissae.size(); }

    /// Fits and stores slope/intercept; throws DegenerateInput like fit_loglog.
    void fit()
    {
        const LogLogFit f = fit_loglog(abscissae, errors);
        slope = f.slope;
        intercept = f.intercept;
        excluded = f.excluded;
    }

    /// Slope of the fit through points 0..i, NaN while fewer than two are usable.
    [[nodiscard]] std::vector<double> cumulative_slopes() const
    {
        std::vector<double> out(size());
        for (std::size_t i = 0; i < size(); ++i) {
            out[i] = detail::least_squares_log2(abscissae, errors, i + 1).slope;
        }
        return out;
    }
};

[[nodiscard]] inline double fit_rate(const ErrorCurve& curve)
{
    return fit_loglog(curve.abscissae, curve.errors).slope;
}

// ---------------------------------------------------------------------------
// Closed-form error functionals. Every one is a sum over degrees of
// independent per-mode contributions, accumulated in ascending degree.

/// ||X^(kappa_ref)(t) - X^(kappa)(t)||_{L2(Omega; L2)} under the shared noise.
[[nodiscard]] inline double spectral_strong_error_exact(const CoefficientField& initial_msq,
                                                        const AngularPowerSpectrum& spectrum, int kappa,
                                                        int kappa_ref, double t)
{
    detail::check_time(t, "spectral_strong_error_exact");
    if (kappa < 0 || kappa > kappa_ref) {
        throw DomainError("spectral_strong_error_exact: need 0 <= kappa <= kappa_ref");
    }
    CompensatedSum total;
    for (int l = kappa + 1; l <= kappa_ref; ++l) {
        const double rate = decay_rate(l);
        const double deterministic = detail::weighted_block_sum(initial_msq, l);
        if (deterministic != 0.0) {
            total += std::exp(-2.0 * rate * t) * deterministic;
        }
        total += spectrum.power(l) * (2.0 * l + 1.0) * detail::convolution_variance(rate, t);
    }
    return std::sqrt(total.value());
}

/// Sum over steps of the integral of (e^{-rate(t_k - s)} - xi^{k-j+delta})^2
/// over [t_{j-1}, t_j], i.e. the noise part of one unit-intensity mode's
/// squared EM error at t_k = k h.
[[nodiscard]] inline double em_convolution_gap(const Scheme& scheme, double rate, double h,
                                               std::int64_t k)
{
    if (rate == 0.0 || k == 0) {
        return 0.0;
    }
    const double x = rate * h;
    const double linear = numeric::linear_decay_gap(x);
    const double squared = numeric::squared_decay_gap(x);
    const double one_step_decay = -std::expm1(-x);
    CompensatedSum total;
    // n = k - j counts steps between the increment and the horizon; the
    // integrand on that step is (a - q) + a (e^{-rate v} - 1), v in [0, h].
    for (std::int64_t n = 0; n < k; ++n) {
        const double nd = static_cast<double>(n);
        const double a = x * nd > 745.0 ? 0.0 : std::exp(-x * nd);
        double gap = 0.0; // a - q
        double q = 0.0;
        if (scheme.delta() == 0) {
            gap = exp_factor_power_difference(scheme, rate, h, nd);
            q = a - gap;
        } else {
            gap = exp_factor_power_difference(scheme, rate, h, nd + 1.0) + a * one_step_decay;
            q = factor_power(scheme, rate, h, nd + 1.0);
        }
        total += h * (gap * gap - 2.0 * gap * a * linear + a * a * squared);
        if (n > 0 && a < 1e-20 && std::abs(q) < 1e-20) {
            break;
        }
    }
    return total.value();
}

/// ||X^(kappa)(t_k) - X^(kappa,h)(t_k)||_{L2(Omega; L2)}, t_k = k h, with the
/// EM increments equal to the increments of the driving Wiener process.
[[nodiscard]] inline double em_strong_error_exact(const Scheme& scheme, const CoefficientField& initial_msq,
                                                  const AngularPowerSpectrum& spectrum, int kappa, double h,
                                                  std::int64_t k)
{
    detail::check_step(h, k, "em_strong_error_exact");
    require_stable(scheme, kappa, h);
    CompensatedSum total;
    for (int l = 0; l <= kappa; ++l) {
        const double rate = decay_rate(l);
        const double deterministic = detail::weighted_block_sum(initial_msq, l);
        if (deterministic != 0.0) {
            const double d = exp_factor_power_difference(scheme, rate, h, static_cast<double>(k));
            total += d * d * deterministic;
        }
        const double a = spectrum.power(l);
        if (a != 0.0) {
            total += a * (2.0 * l + 1.0) * em_convolution_gap(scheme, rate, h, k);
        }
    }
    return std::sqrt(total.value());
}

/// Closed-form ||X^(kappa,h_j)(T) - X^(kappa,h_ref)(T)|| for two EM solutions
/// driven by the same dyadic lattice, h_j = T 2^{-level}, h_ref = T 2^{-ref_level}.
[[nodiscard]] inline double em_pair_strong_error_exact(const Scheme& scheme,
                                                       const CoefficientField& initial_msq,
                                                       const AngularPowerSpectrum& spectrum, int kappa,
                                                       double horizon, int level, int ref_level)
{
    if (level < 0 || ref_level < level || ref_level > 40 || !(horizon > 0.0)) {
        throw DomainError("em_pair_strong_error_exact: need 0 <= level <= ref_level, T > 0");
    }
    const double hc = std::ldexp(horizon, -level);
    const double hf = std::ldexp(horizon, -ref_level);
    require_stable(scheme, kappa, hc);
    require_stable(scheme, kappa, hf);
    const std::int64_t kc = std::int64_t{1} << level;
    const std::int64_t kf = std::int64_t{1} << ref_level;
    const int shift = ref_level - level;
    const int delta = scheme.delta();
    CompensatedSum total;
    for (int l = 0; l <= kappa; ++l) {
        const double rate = decay_rate(l);
        const double deterministic = detail::weighted_block_sum(initial_msq, l);
        if (deterministic != 0.0) {
            const double d = factor_power(scheme, rate, hc, static_cast<double>(kc)) -
                             factor_power(scheme, rate, hf, static_cast<double>(kf));
            total += d * d * deterministic;
        }
        const double a = spectrum.power(l);
        if (a == 0.0 || rate == 0.0) {
            continue;
        }
        // Fine increment i enters the fine solution with weight
        // xi_f^{kf-1-i+delta} and the coarse one with xi_c^{kc-1-(i>>shift)+delta}.
        CompensatedSum mode;
        for (std::int64_t i = kf - 1; i >= 0; --i) {
            const double wf = factor_power(scheme, rate, hf, static_cast<double>(kf - 1 - i + delta));
            const double wc =
                factor_power(scheme, rate, hc, static_cast<double>(kc - 1 - (i >> shift) + delta));
            const double d = wc - wf;
            mode += d * d * hf;
            if (std::abs(wf) < 1e-20 && std::abs(wc) < 1e-20) {
                break;
            }
        }
        total += a * (2.0 * l + 1.0) * mode.value();
    }
    return std::sqrt(total.value());
}

/// ||E X(t) - E X^(kappa)(t)||: the degrees of `mean` above kappa, decayed.
[[nodiscard]] inline double spectral_expectation_error(const CoefficientField& mean, int kappa, double t)
{
    detail::check_time(t, "spectral_expectation_error");
    if (kappa < 0) {
        throw DomainError("spectral_expectation_error: negative truncation");
    }
    if (kappa >= mean.truncation()) {
        return 0.0;
    }
    // The slowest surviving decay is factored out so that e^{-2 lambda t}
    // cannot underflow while e^{-lambda t} is still representable.
    const double slowest = decay_rate(kappa + 1);
    CompensatedSum total;
    for (int l = kappa + 1; l <= mean.truncation(); ++l) {
        double block = 0.0;
        for (const double v : mean.block(l)) {
            block += v * v;
        }
        block = 2.0 * block - mean.block(l)[0] * mean.block(l)[0];
        if (block != 0.0) {
            total += std::exp(-2.0 * (decay_rate(l) - slowest) * t) * block;
        }
    }
    return std::exp(-slowest * t) * std::sqrt(total.value());
}

/// ||E X^(kappa)(t_k) - E X^(kappa,h)(t_k)||.
[[nodiscard]] inline double em_expectation_error(const Scheme& scheme, const CoefficientField& mean,
                                                 int kappa, double h, std::int64_t k)
{
    detail::check_step(h, k, "em_expectation_error");
    require_stable(scheme, kappa, h);
    CompensatedSum total;
    for (int l = 0; l <= std::min(kappa, mean.truncation()); ++l) {
        double block = 0.0;
        for (const double v : mean.block(l)) {
            block += v * v;
        }
        block = 2.0 * block - mean.block(l)[0] * mean.block(l)[0];
        if (block != 0.0) {
            const double d = exp_factor_power_difference(scheme, decay_rate(l), h, static_cast<double>(k));
            total += d * d * block;
        }
    }
    return std::sqrt(total.value());
}

/// |E||X^(kappa_ref)(t)||^2 - E||X^(kappa)(t)||^2|, summed over the tail directly.
[[nodiscard]] inline double spectral_second_moment_error(const CoefficientField& initial_msq,
                                                         const AngularPowerSpectrum& spectrum, int kappa,
                                                         int kappa_ref, double t)
{
    const double e = spectral_strong_error_exact(initial_msq, spectrum, kappa, kappa_ref, t);
    return e * e;
}

/// |E||X^(kappa)(t_k)||^2 - E||X^(kappa,h)(t_k)||^2| with per-degree differences
/// formed before summation.
[[nodiscard]] inline double em_second_moment_error(const Scheme& scheme, const CoefficientField& initial_msq,
                                                   const AngularPowerSpectrum& spectrum, int kappa, double h,
                                                   std::int64_t k)
{
    detail::check_step(h, k, "em_second_moment_error");
    require_stable(scheme, kappa, h);
    const double t = h * static_cast<double>(k);
    CompensatedSum total;
    for (int l = 0; l <= kappa; ++l) {
        const double rate = decay_rate(l);
        const double deterministic = detail::weighted_block_sum(initial_msq, l);
        if (deterministic != 0.0) {
            total += exp_factor_power_difference(scheme, rate, h, 2.0 * static_cast<double>(k)) *
                     deterministic;
        }
        const double a = spectrum.power(l);
        if (a != 0.0) {
            total += a * (2.0 * l + 1.0) *
                     (detail::convolution_variance(rate, t) - em_noise_sum(scheme, rate, h, k));
        }
    }
    return std::abs(total.value());
}

// ---------------------------------------------------------------------------
// Monte Carlo estimators. Sample s uses replica_seed(seed, s); per-sample
// results are reduced in sample order, so estimates do not depend on the
// thread count.

struct McEstimate {
    double value = 0.0;  ///< estimated quantity
    double stderr_value = 0.0;
    double mean_square = 0.0;        ///< for strong errors: mean of the squared norms
    double mean_square_stderr = 0.0; ///< standard error of mean_square
    std::size_t samples = 0;
};

namespace detail {
inline std::pair<double, double> mean_and_stderr(std::span<const double> values)
{
    const std::size_t n = values.size();
    if (n == 0) {
        return {0.0, 0.0};
    }
    CompensatedSum sum;
    for (double v : values) {
        sum += v;
    }
    const double mean = sum.value() / static_cast<double>(n);
    if (n < 2) {
        return {mean, 0.0};
    }
    CompensatedSum ss;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    const double variance = ss.value() / static_cast<double>(n - 1);
    return {mean, std::sqrt(variance / static_cast<double>(n))};
}

/// Root of a mean of squared norms; the standard error of the root follows
/// from the delta method, se / (2 sqrt(mean)).
inline McEstimate strong_estimate(std::span<const double> squared_norms)
{
    McEstimate est;
    const auto [mean, se] = mean_and_stderr(squared_norms);
    est.samples = squared_norms.size();
    est.mean_square = mean;
    est.mean_square_stderr = se;
    est.value = std::sqrt(std::max(mean, 0.0));
    est.stderr_value = est.value > 0.0 ? se / (2.0 * est.value) : 0.0;
    return est;
}
} // namespace detail

/// Sample mean of ||X^(kappa)(t)||^2 from the exact solver.
[[nodiscard]] inline McEstimate mc_second_moment(const CoefficientField& initial,
                                                 const AngularPowerSpectrum& spectrum, int kappa, double t,
                                                 std::size_t samples, std::uint64_t seed, int threads = 1)
{
    detail::check_time(t, "mc_second_moment");
    std::vector<double> norms(samples);
    const double times[] = {t};
    parallel_for(samples, threads, [&](std::size_t s) {
        const Trajectory path = spectral_solve(initial, spectrum, kappa, times, replica_seed(seed, s));
        norms[s] = l2_norm_sq(path.states.back());
    });
    McEstimate est;
    const auto [mean, se] = detail::mean_and_stderr(norms);
    est.value = est.mean_square = mean;
    est.stderr_value = est.mean_square_stderr = se;
    est.samples = samples;
    return est;
}

/// Coupled Monte Carlo estimate of spectral_strong_error_exact: each sample
/// draws X^(kappa_ref)(t) from the exact solver and X^(kappa)(t) is its
/// truncation, so the error is the norm of the channels above kappa.
[[nodiscard]] inline McEstimate mc_spectral_strong_error(const CoefficientField& initial,
                                                         const AngularPowerSpectrum& spectrum, int kappa,
                                                         int kappa_ref, double t, std::size_t samples,
                                                         std::uint64_t seed, int threads = 1)
{
    detail::check_time(t, "mc_spectral_strong_error");
    if (kappa < 0 || kappa > kappa_ref) {
        throw DomainError("mc_spectral_strong_error: need 0 <= kappa <= kappa_ref");
    }
    const CoefficientField start = initial.resized(kappa_ref);
    // per channel: decay factor and transition standard deviation over [0, t]
    std::vector<double> decay(start.size(), 1.0);
    std::vector<double> spread(start.size(), 0.0);
    if (t > 0.0) {
        for (std::size_t c = channel_count(kappa); c < start.size(); ++c) {
            const OuMode mode = channel_mode(spectrum, c);
            decay[c] = mode.mean_factor(t);
            spread[c] = std::sqrt(mode.transition_variance(t));
        }
    }
    std::vector<double> squared(samples);
    parallel_for(samples, threads, [&](std::size_t s) {
        // Same draws as spectral_solve(initial, spectrum, kappa_ref, {t}, seed_s),
        // without materialising the field.
        const std::uint64_t sample_seed = replica_seed(seed, s);
        double sum = 0.0;
        for (std::size_t c = channel_count(kappa); c < start.size(); ++c) {
            double x = start[c];
            if (t > 0.0) {
                x = decay[c] * x + spread[c] * NormalStream(sample_seed, Stream::exact_transition, c)(0);
            }
            sum += channel_weight(c) * x * x;
        }
        squared[s] = sum;
    });
    return detail::strong_estimate(squared);
}

/// One approximation in a Monte Carlo strong-error sweep.
struct McPoint {
    int kappa = 0;
    int level = 0;
};

/// Reference solution: EM at `level`, or the exact solution coupled to the
/// lattice through its Brownian-bridge fill-in when `level` is empty.
struct McReference {
    int kappa = 0;
    std::optional<int> level;
};

/// Strong errors ||X^(kappa_i, h_i)(T) - X_ref(T)|| for every point, all driven
/// by one shared lattice at `lattice_level` per sample; X0 = 0. Channels are
/// processed one at a time, so memory is O(2^lattice_level) per worker, while
/// the increments are exactly those of sample_lattice(kappa_max, T,
/// lattice_level, replica_seed(seed, s)).
[[nodiscard]] inline std::vector<McEstimate> mc_strong_errors(
    const Scheme& scheme, const AngularPowerSpectrum& spectrum, double horizon,
    std::span<const McPoint> points, const McReference& reference, int lattice_level,
    std::size_t samples, std::uint64_t seed, int threads = 1)
{
    if (!(horizon > 0.0) || lattice_level < 0 || lattice_level > 30) {
        throw DomainError("mc_strong_errors: need T > 0 and 0 <= lattice level <= 30");
    }
    int kappa_max = reference.kappa;
    for (const McPoint& p : points) {
        if (p.level < 0 || p.level > lattice_level || p.kappa < 0) {
            throw DomainError("mc_strong_errors: point level outside the lattice");
        }
        require_stable(scheme, p.kappa, std::ldexp(horizon, -p.level));
        kappa_max = std::max(kappa_max, p.kappa);
    }
    if (reference.level) {
        if (*reference.level < 0 || *reference.level > lattice_level) {
            throw DomainError("mc_strong_errors: reference level outside the lattice");
        }
        require_stable(scheme, reference.kappa, std::ldexp(horizon, -*reference.level));
    }
    const double fine_step = std::ldexp(horizon, -lattice_level);
    const std::size_t fine_steps = std::size_t{1} << lattice_level;
    std::vector<BridgeWeights> bridges;
    if (!reference.level) {
        for (int l = 0; l <= reference.kappa; ++l) {
            bridges.push_back(bridge_weights(decay_rate(l), fine_step, fine_steps));
        }
    }

    const std::size_t n_points = points.size();
    std::vector<double> squared(samples * n_points);
    parallel_for(samples, threads, [&](std::size_t s) {
        const std::uint64_t sample_seed = replica_seed(seed, s);
        std::vector<double> fine(fine_steps);
        std::vector<std::vector<double>> levels(static_cast<std::size_t>(lattice_level) + 1);
        std::vector<double> sums(n_points, 0.0);
        const double scale = std::sqrt(fine_step);

        auto em_channel = [&](std::size_t c, int level) {
            const auto& db = levels[static_cast<std::size_t>(level)];
            const double h = std::ldexp(horizon, -level);
            const double rate = decay_rate(channel_degree(c));
            const double xi = scheme.step_factor(rate, h);
            const double noise = scheme.noise_factor(rate, h) * std::sqrt(spectrum.channel_intensity(c));
            double v = 0.0;
            for (double d : db) {
                v = xi * v + noise * d;
            }
            return v;
        };

        for (std::size_t c = 0; c < channel_count(kappa_max); ++c) {
            const int l = channel_degree(c);
            NormalStream(sample_seed, Stream::brownian_increment, c).fill(fine);
            for (double& v : fine) {
                v *= scale;
            }
            // Pairwise halving, level by level, as aggregate() does.
            levels[static_cast<std::size_t>(lattice_level)] = fine;
            for (int lev = lattice_level - 1; lev >= 0; --lev) {
                const auto& src = levels[static_cast<std::size_t>(lev) + 1];
                auto& dst = levels[static_cast<std::size_t>(lev)];
                dst.resize(src.size() / 2);
                for (std::size_t i = 0; i < dst.size(); ++i) {
                    dst[i] = src[2 * i] + src[2 * i + 1];
                }
            }
            double ref = 0.0;
            if (l <= reference.kappa) {
                if (reference.level) {
                    ref = em_channel(c, *reference.level);
                } else {
                    const BridgeWeights& w = bridges[static_cast<std::size_t>(l)];
                    double conv = 0.0;
                    for (std::size_t i = 0; i < fine_steps; ++i) {
                        conv += w.increment_weights[i] * fine[i];
                    }
                    const double z = NormalStream(sample_seed, Stream::bridge_residual, c)(0);
                    conv += std::sqrt(w.residual_variance) * z;
                    ref = std::sqrt(spectrum.channel_intensity(c)) * conv;
                }
            }
            const double weight = channel_weight(c);
            for (std::size_t p = 0; p < n_points; ++p) {
                const double approx = l <= points[p].kappa ? em_channel(c, points[p].level) : 0.0;
                const double d = approx - ref;
                sums[p] += weight * d * d;
            }
        }
        std::copy(sums.begin(), sums.end(), squared.begin() + static_cast<std::ptrdiff_t>(s * n_points));
    });

    std::vector<McEstimate> out(n_points);
    std::vector<double> column(samples);
    for (std::size_t p = 0; p < n_points; ++p) {
        for (std::size_t s = 0; s < samples; ++s) {
            column[s] = squared[s * n_points + p];
        }
        out[p] = detail::strong_estimate(column);
    }
    return out;
}

/// EM at level j against EM at ref_level on shared lattices of level
/// lattice_level, same truncation kappa.
[[nodiscard]] inline McEstimate mc_strong_error(const Scheme& scheme, const AngularPowerSpectrum& spectrum,
                                                int kappa, double horizon, int level, int ref_level,
                                                int lattice_level, std::size_t samples, std::uint64_t seed,
                                                int threads = 1)
{
    if (level > ref_level || ref_level > lattice_level) {
        throw DomainError("mc_strong_error: need level <= ref_level <= lattice level");
    }
    const McPoint point{kappa, level};
    return mc_strong_errors(scheme, spectrum, horizon, std::span<const McPoint>(&point, 1),
                            McReference{kappa, ref_level}, lattice_level, samples, seed, threads)
        .front();
}

} // namespace sphere_spde

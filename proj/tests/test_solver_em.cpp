#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sphere_spde/analysis.hpp"
#include "sphere_spde/solver_em.hpp"

using namespace sphere_spde;

TEST(EmStep, Examples)
{
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        EXPECT_DOUBLE_EQ(em_step(s, 0.0, 0.1, 4.0, 1.5, 0.25), 1.5 + 2.0 * 0.25);
    }
    EXPECT_DOUBLE_EQ(em_step(Scheme::forward(), 5.0, 0.1, 0.0, 1.0, 0.3), 0.5);
    EXPECT_DOUBLE_EQ(em_step(Scheme::backward(), 10.0, 0.1, 0.0, 1.0, 0.3), 0.5);
    // backward noise enters with xi^1
    EXPECT_DOUBLE_EQ(em_step(Scheme::backward(), 10.0, 0.1, 1.0, 0.0, 1.0), 0.5);
}

TEST(EmStep, ForwardGate)
{
    EXPECT_THROW((void)em_step(Scheme::forward(), 21.0, 0.1, 0.0, 1.0, 0.0), StabilityError);
    EXPECT_NO_THROW((void)em_step(Scheme::forward(), 20.0, 0.1, 0.0, 1.0, 0.0));
    EXPECT_THROW((void)em_step(Scheme::strict_forward(), 11.0, 0.1, 0.0, 1.0, 0.0), StabilityError);
    EXPECT_NO_THROW((void)em_step(Scheme::backward(), 1e9, 0.1, 0.0, 1.0, 0.0));
}

TEST(StabilityCheck, PairedSweepIsAdmissibleAtDefaultConstant)
{
    for (int m = 1; m <= 10; ++m) {
        const int kappa = 1 << m;
        const double h = std::ldexp(1.0, -2 * m);
        const StabilityReport report = stability_check(Scheme::forward(), kappa, h);
        EXPECT_TRUE(report.ok) << "m=" << m;
        EXPECT_DOUBLE_EQ(report.product, 1.0 + std::ldexp(1.0, -m));
        // 1 + 2^{-m} exceeds the strict constant
        EXPECT_FALSE(stability_check(Scheme::strict_forward(), kappa, h).ok);
    }
}

TEST(StabilityCheck, Examples)
{
    EXPECT_TRUE(stability_check(Scheme::backward(), 1024, 10.0).ok);
    // kappa = 4, h = 0.1: 20 * 0.1 = 2, on the boundary of the default gate
    EXPECT_TRUE(stability_check(Scheme::forward(), 4, 0.1).ok);
    const StabilityReport strict = stability_check(Scheme::strict_forward(), 4, 0.1);
    EXPECT_FALSE(strict.ok);
    EXPECT_DOUBLE_EQ(strict.product, 2.0);
    EXPECT_FALSE(strict.message.empty());
    EXPECT_FALSE(stability_check(Scheme::forward(), 4, 0.11).ok);
    EXPECT_THROW(require_stable(Scheme::forward(), 4, 0.11), StabilityError);
}

TEST(FactorPower, MatchesLongDouble)
{
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        for (double x : {0.0, 1e-9, 1e-4, 0.3, 0.999, 1.0, 1.5, 2.0}) {
            for (double n : {0.0, 1.0, 2.0, 7.0, 1024.0}) {
                long double xi = s.kind == SchemeKind::forward ? 1.0L - x : 1.0L / (1.0L + x);
                const long double want = std::pow(xi, static_cast<long double>(n));
                EXPECT_NEAR(factor_power(s, x, 1.0, n), static_cast<double>(want),
                            1e-13 * std::abs(static_cast<double>(want)) + 1e-300);
                if (x > 0.0 && x < 1e-6) {
                    continue; // beyond long double resolution, covered below
                }
                const long double diff = std::exp(-static_cast<long double>(x) * n) - want;
                const double got = exp_factor_power_difference(s, x, 1.0, n);
                EXPECT_NEAR(got, static_cast<double>(diff), 1e-9 * std::abs(static_cast<double>(diff)) + 1e-18)
                    << to_string(s.kind) << " x=" << x << " n=" << n;
            }
        }
    }
}

TEST(ExpFactorPowerDifference, KeepsRelativeAccuracyForTinySteps)
{
    // e^{-xn} - (1-x)^n ~ n x^2 / 2 e^{-xn} for small x
    const double x = 1e-9;
    const double n = 1000.0;
    const double want = n * x * x / 2.0 * std::exp(-x * n);
    EXPECT_NEAR(exp_factor_power_difference(Scheme::forward(), x, 1.0, n), want, 1e-6 * want);
    EXPECT_NEAR(exp_factor_power_difference(Scheme::backward(), x, 1.0, n), -want, 1e-6 * want);
}

TEST(EmSolve, SilentNoiseGivesPowersOfTheStepFactor)
{
    CoefficientField x0(3);
    x0.at(3, 2, Part::real) = 1.0;
    x0.at(1, 0) = -2.0;
    const auto lat = sample_lattice(3, 1.0, 5, 4);
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        const Trajectory path = em_solve(s, x0, AngularPowerSpectrum::silent(), 3, 5, lat);
        const double h = 1.0 / 32.0;
        for (std::size_t k = 0; k < path.states.size(); ++k) {
            EXPECT_DOUBLE_EQ(path.times[k], h * k);
            EXPECT_NEAR(path.states[k].at(3, 2, Part::real), std::pow(s.step_factor(12.0, h), k), 1e-15);
            EXPECT_NEAR(path.states[k].at(1, 0), -2.0 * std::pow(s.step_factor(2.0, h), k), 1e-15);
        }
    }
}

TEST(EmSolve, MatchesClosedRecursion)
{
    const AngularPowerSpectrum spec(1.5, 2.0, 0.4);
    CoefficientField x0(4);
    for (std::size_t c = 0; c < x0.size(); ++c) {
        x0[c] = 0.1 * static_cast<double>(c) - 0.5;
    }
    const auto lat = sample_lattice(4, 1.0, 6, 11);
    const IncrementTable inc = aggregate(lat, 6);
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        const Trajectory path = em_solve(s, x0, spec, 4, inc);
        const double h = inc.step();
        const std::size_t k = inc.steps();
        for (std::size_t c = 0; c < x0.size(); ++c) {
            const double rate = decay_rate(channel_degree(c));
            const double xi = s.step_factor(rate, h);
            long double want = std::pow(static_cast<long double>(xi), static_cast<long double>(k)) * x0[c];
            const auto db = inc.channel(c);
            for (std::size_t j = 1; j <= k; ++j) {
                want += std::sqrt(static_cast<long double>(spec.channel_intensity(c))) *
                        std::pow(static_cast<long double>(xi), static_cast<long double>(k - j + s.delta())) *
                        db[j - 1];
            }
            EXPECT_NEAR(path.states.back()[c], static_cast<double>(want), 1e-12);
        }
    }
}

TEST(EmSolve, StabilityContract)
{
    const auto lat = sample_lattice(16, 1.0, 2, 1);
    const AngularPowerSpectrum spec(2.0);
    EXPECT_NO_THROW((void)em_solve(Scheme::backward(), CoefficientField(0), spec, 16, 2, lat));
    EXPECT_THROW((void)em_solve(Scheme::forward(), CoefficientField(0), spec, 16, 2, lat), StabilityError);
    EXPECT_THROW((void)em_solve(Scheme::backward(), CoefficientField(0), spec, 17, 2, lat), DomainError);
    EXPECT_THROW((void)em_solve(Scheme::backward(), CoefficientField(0), spec, 4, 3, lat), DomainError);
}

TEST(EmSolve, TerminalThreadsAndLatticeFrontEndAgree)
{
    const AngularPowerSpectrum spec(2.0);
    const auto lat = sample_lattice(8, 1.0, 8, 21);
    const Scheme s = Scheme::backward();
    const Trajectory serial = em_solve(s, CoefficientField(0), spec, 8, 6, lat, 1);
    const Trajectory threaded = em_solve(s, CoefficientField(0), spec, 8, 6, lat, 4);
    EXPECT_EQ(serial.states.back(), threaded.states.back());
    EXPECT_EQ(serial.states.back(), em_terminal(s, CoefficientField(0), spec, 8, aggregate(lat, 6)));
}

TEST(EmSolve, MeanAndVarianceMatchClosedForms)
{
    const AngularPowerSpectrum spec(2.0, 1.0, 0.0);
    CoefficientField x0(2);
    x0.at(2, 1, Part::real) = 1.0;
    const std::size_t c = channel_index(2, 1, Part::real);
    const int level = 4;
    const double h = std::ldexp(1.0, -level);
    const std::size_t n = 10000;
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto lat = sample_lattice(2, 1.0, level, replica_seed(3, i));
            const double v = em_terminal(s, x0, spec, 2, lat.fine())[c];
            sum += v;
            sum2 += v * v;
        }
        const double mean = sum / n;
        const double var = (sum2 - n * mean * mean) / (n - 1);
        const double rate = 6.0;
        const double want_mean = factor_power(s, rate, h, 16.0);
        const double want_var = spec.channel_intensity(c) * em_noise_sum(s, rate, h, 16);
        EXPECT_NEAR(mean, want_mean, 3.0 * std::sqrt(var / n));
        // variance of a Gaussian sample variance is 2 sigma^4 / (n-1)
        EXPECT_NEAR(var, want_var, 3.0 * want_var * std::sqrt(2.0 / (n - 1)));
    }
}

TEST(EmSolve, BackwardContractionWithoutNoise)
{
    CoefficientField x0(6);
    for (std::size_t c = 0; c < x0.size(); ++c) {
        x0[c] = std::sin(static_cast<double>(c));
    }
    const auto lat = sample_lattice(6, 1.0, 3, 0);
    const Trajectory path = em_solve(Scheme::backward(), x0, AngularPowerSpectrum::silent(), 6, 3, lat);
    for (std::size_t k = 1; k < path.states.size(); ++k) {
        EXPECT_LE(l2_norm_sq(path.states[k]), l2_norm_sq(path.states[k - 1]));
    }
}

TEST(EmSolve, ForwardAndBackwardAgreeAtFirstOrder)
{
    // One mode (l = 1, intensity A_1 = 1), common Brownian paths; the
    // difference of the two schemes after T/h steps is O(h).
    const AngularPowerSpectrum spec(2.0);
    const std::size_t c = channel_index(1, 0);
    std::vector<double> hs, diffs;
    for (int j = 4; j <= 10; ++j) {
        double sq = 0.0;
        for (std::uint64_t p = 0; p < 50; ++p) {
            const auto lat = sample_lattice(1, 1.0, 10, replica_seed(314, p));
            const IncrementTable inc = aggregate(lat, j);
            CoefficientField x0(1);
            x0[c] = 1.0;
            const double f = em_terminal(Scheme::forward(), x0, spec, 1, inc)[c];
            const double b = em_terminal(Scheme::backward(), x0, spec, 1, inc)[c];
            sq += (f - b) * (f - b);
        }
        hs.push_back(std::ldexp(1.0, -j));
        diffs.push_back(std::sqrt(sq / 50.0));
    }
    EXPECT_NEAR(fit_loglog(hs, diffs).slope, 1.0, 0.2);
}

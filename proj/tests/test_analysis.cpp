#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "sphere_spde/analysis.hpp"
#include "support/oracles.hpp"

using namespace sphere_spde;

namespace {
std::vector<double> dyadic(int from, int to, int sign)
{
    std::vector<double> out;
    for (int j = from; j <= to; ++j) {
        out.push_back(std::ldexp(1.0, sign * j));
    }
    return out;
}

/// Brute-force squared EM error of one unit-intensity mode: for each step the
/// integral of (e^{-rate(t_k - s)} - xi^{k-j+delta})^2 by a midpoint rule.
long double brute_convolution_gap(const Scheme& s, double rate, double h, std::int64_t k, std::int64_t points)
{
    const long double x = static_cast<long double>(rate) * h;
    const long double xi = s.kind == SchemeKind::forward ? 1.0L - x : 1.0L / (1.0L + x);
    const long double tk = static_cast<long double>(h) * k;
    long double total = 0.0L;
    for (std::int64_t j = 1; j <= k; ++j) {
        const long double q = std::pow(xi, static_cast<long double>(k - j + s.delta()));
        total += oracle::midpoint(
            [&](long double u) {
                const long double d = std::exp(-static_cast<long double>(rate) * (tk - u)) - q;
                return d * d;
            },
            static_cast<long double>(h) * (j - 1), static_cast<long double>(h) * j, points);
    }
    return total;
}
} // namespace

TEST(FitRate, ExactPowerLaws)
{
    const auto h = dyadic(1, 10, -1);
    std::vector<double> linear;
    for (double v : h) {
        linear.push_back(3.0 * v);
    }
    EXPECT_NEAR(fit_loglog(h, linear).slope, 1.0, 1e-12);
    EXPECT_NEAR(fit_loglog(h, linear).intercept, std::log2(3.0), 1e-12);

    const auto kappa = dyadic(0, 9, 1);
    std::vector<double> quad;
    for (double v : kappa) {
        quad.push_back(std::pow(v, -2.0));
    }
    ErrorCurve curve;
    for (std::size_t i = 0; i < kappa.size(); ++i) {
        curve.push(kappa[i], quad[i]);
    }
    EXPECT_NEAR(fit_rate(curve), -2.0, 1e-12);
}

TEST(FitRate, NoisySquareRootLaw)
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.01);
    ErrorCurve curve;
    for (double h : dyadic(2, 14, -1)) {
        curve.push(h, 0.7 * std::sqrt(h) * (1.0 + noise(rng)));
    }
    EXPECT_NEAR(fit_rate(curve), 0.5, 0.05);
}

TEST(FitRate, ZerosAreExcludedAndReported)
{
    ErrorCurve curve;
    curve.push(1.0, 1.0);
    curve.push(2.0, 0.0);
    curve.push(4.0, 0.25);
    curve.push(8.0, 0.125);
    curve.fit();
    EXPECT_NEAR(curve.slope, -1.0, 1e-12);
    ASSERT_EQ(curve.excluded.size(), 1u);
    EXPECT_EQ(curve.excluded[0], 1u);
}

TEST(FitRate, DegenerateInputs)
{
    ErrorCurve curve;
    curve.push(1.0, 1.0);
    curve.push(2.0, 0.5);
    EXPECT_THROW((void)fit_rate(curve), DegenerateInput);
    curve.push(4.0, 0.0);
    EXPECT_THROW((void)fit_rate(curve), DegenerateInput);
    const std::vector<double> same{2.0, 2.0, 2.0};
    const std::vector<double> ys{1.0, 2.0, 3.0};
    EXPECT_THROW((void)fit_loglog(same, ys), DegenerateInput);
}

TEST(ErrorCurve, CumulativeSlopes)
{
    ErrorCurve curve;
    for (double k : dyadic(0, 4, 1)) {
        curve.push(k, 1.0 / k);
    }
    const auto slopes = curve.cumulative_slopes();
    EXPECT_TRUE(std::isnan(slopes[0]));
    for (std::size_t i = 1; i < slopes.size(); ++i) {
        EXPECT_NEAR(slopes[i], -1.0, 1e-12);
    }
}

TEST(SpectralStrongError, Examples)
{
    const AngularPowerSpectrum spec(3.0);
    EXPECT_EQ(spectral_strong_error_exact(CoefficientField(0), spec, 64, 64, 1.0), 0.0);
    const AngularPowerSpectrum banded(3.0, 1.0, 0.0, 10);
    EXPECT_EQ(spectral_strong_error_exact(CoefficientField(0), banded, 10, 1024, 1.0), 0.0);
    EXPECT_THROW((void)spectral_strong_error_exact(CoefficientField(0), spec, 5, 4, 1.0), DomainError);
}

TEST(SpectralStrongError, MatchesCoupledMonteCarlo)
{
    const AngularPowerSpectrum spec(3.0);
    const McEstimate mc = mc_spectral_strong_error(CoefficientField(0), spec, 4, 1024, 1.0, 1000, 1357);
    const double exact = spectral_strong_error_exact(CoefficientField(0), spec, 4, 1024, 1.0);
    EXPECT_NEAR(mc.value, exact, 3.0 * mc.stderr_value);
    EXPECT_NEAR(mc.mean_square, exact * exact, 3.0 * mc.mean_square_stderr);
}

TEST(SpectralStrongError, BoundWithEmpiricalConstantIsStable)
{
    for (double alpha : {1.0, 2.0, 3.0}) {
        const AngularPowerSpectrum spec(alpha);
        CoefficientField x0(600);
        for (int l = 0; l <= 600; ++l) {
            x0.at(l, 0) = 1.0 / (1.0 + l);
        }
        CoefficientField msq = x0;
        for (double& v : msq.values()) {
            v *= v;
        }
        const double t = 0.01;
        const double x0_norm = std::sqrt(l2_norm_sq(x0));
        std::vector<double> constants;
        for (int j = 4; j <= 9; ++j) {
            const int kappa = 1 << j;
            const double err = spectral_strong_error_exact(msq, spec, kappa, 1 << 14, t);
            const double decay = std::exp(-(kappa + 1.0) * (kappa + 2.0) * t) * x0_norm;
            constants.push_back(std::max(err - decay, 0.0) / std::pow(kappa, -alpha / 2.0));
        }
        const double c_hat = *std::max_element(constants.begin(), constants.end());
        EXPECT_TRUE(std::isfinite(c_hat));
        for (int j = 4; j <= 9; ++j) {
            const int kappa = 1 << j;
            const double err = spectral_strong_error_exact(msq, spec, kappa, 1 << 14, t);
            EXPECT_LE(err, std::exp(-(kappa + 1.0) * (kappa + 2.0) * t) * x0_norm +
                               c_hat * std::pow(kappa, -alpha / 2.0) * (1.0 + 1e-12));
        }
        // the required constant levels off instead of drifting
        EXPECT_LT(std::abs(constants.back() - constants[constants.size() - 2]) / constants.back(), 0.2)
            << "alpha=" << alpha;
    }
}

TEST(EmStrongError, DeterministicPartOnly)
{
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        CoefficientField msq(3);
        msq.at(3, 0) = 4.0;
        const double h = 1.0 / 16.0;
        const double got = em_strong_error_exact(s, msq, AngularPowerSpectrum::silent(), 3, h, 16);
        const double want = std::abs(std::exp(-12.0) - std::pow(s.step_factor(12.0, h), 16)) * 2.0;
        EXPECT_NEAR(got, want, 1e-12 * want);
    }
}

TEST(EmStrongError, ZeroModeIsExact)
{
    const AngularPowerSpectrum zero_only(2.0, 0.0, 1.0);
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        EXPECT_EQ(em_strong_error_exact(s, CoefficientField(0), zero_only, 0, 0.1, 10), 0.0);
        EXPECT_EQ(em_convolution_gap(s, 0.0, 0.1, 10), 0.0);
    }
}

TEST(EmStrongError, MatchesMidpointQuadrature)
{
    const AngularPowerSpectrum spec(2.0);
    const double h = std::ldexp(1.0, -8);
    const std::int64_t k = 256;
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        long double total = 0.0L;
        for (int l = 0; l <= 8; ++l) {
            total += spec.power(l) * (2.0L * l + 1.0L) * brute_convolution_gap(s, decay_rate(l), h, k, 10000);
        }
        const double want = std::sqrt(static_cast<double>(total));
        const double got = em_strong_error_exact(s, CoefficientField(0), spec, 8, h, k);
        EXPECT_NEAR(got, want, 1e-8 * want) << to_string(s.kind);
    }
}

TEST(EmStrongError, ConvolutionGapMatchesQuadratureAcrossRegimes)
{
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        for (double x : {1e-6, 1e-3, 0.3, 1.0, 1.9}) {
            for (std::int64_t k : {1, 3, 40}) {
                const double h = 0.01;
                const double rate = x / h;
                const long double want = brute_convolution_gap(s, rate, h, k, 20000);
                const double got = em_convolution_gap(s, rate, h, k);
                EXPECT_NEAR(got, static_cast<double>(want), 1e-7 * static_cast<double>(want))
                    << to_string(s.kind) << " x=" << x << " k=" << k;
            }
        }
    }
}

TEST(EmStrongError, SchemesDifferByBoundedFactor)
{
    for (double alpha : {1.0, 3.0, 5.0}) {
        const AngularPowerSpectrum spec(alpha);
        for (int m = 1; m <= 6; ++m) {
            const double h = std::ldexp(1.0, -2 * m);
            const std::int64_t k = std::int64_t{1} << (2 * m);
            const double f = em_strong_error_exact(Scheme::forward(), CoefficientField(0), spec, 1 << m, h, k);
            const double b = em_strong_error_exact(Scheme::backward(), CoefficientField(0), spec, 1 << m, h, k);
            EXPECT_GT(f / b, 0.1);
            EXPECT_LT(f / b, 10.0);
        }
    }
}

TEST(EmPairStrongError, MatchesLongDoubleWeights)
{
    const AngularPowerSpectrum spec(2.0);
    const int kappa = 3;
    const int level = 3;
    const int ref = 6;
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        long double total = 0.0L;
        const std::int64_t kc = 1 << level;
        const std::int64_t kf = 1 << ref;
        const long double hc = std::ldexp(1.0L, -level);
        const long double hf = std::ldexp(1.0L, -ref);
        for (int l = 1; l <= kappa; ++l) {
            const long double rate = decay_rate(l);
            const long double xc = s.kind == SchemeKind::forward ? 1 - rate * hc : 1 / (1 + rate * hc);
            const long double xf = s.kind == SchemeKind::forward ? 1 - rate * hf : 1 / (1 + rate * hf);
            for (std::int64_t i = 0; i < kf; ++i) {
                const std::int64_t c = i / (kf / kc);
                const long double d = std::pow(xc, static_cast<long double>(kc - 1 - c + s.delta())) -
                                      std::pow(xf, static_cast<long double>(kf - 1 - i + s.delta()));
                total += spec.power(l) * (2 * l + 1) * d * d * hf;
            }
        }
        EXPECT_NEAR(em_pair_strong_error_exact(s, CoefficientField(0), spec, kappa, 1.0, level, ref),
                    std::sqrt(static_cast<double>(total)), 1e-12);
        EXPECT_EQ(em_pair_strong_error_exact(s, CoefficientField(0), spec, kappa, 1.0, ref, ref), 0.0);
    }
}

TEST(McStrongError, StreamedChannelsMatchExplicitLattice)
{
    const AngularPowerSpectrum spec(2.0);
    const Scheme s = Scheme::backward();
    const std::uint64_t seed = 99;
    const McPoint points[] = {{3, 2}, {4, 4}};
    const int lattice_level = 6;
    const auto em_ref = mc_strong_errors(s, spec, 1.0, points, McReference{5, 6}, lattice_level, 1, seed);
    const auto exact_ref = mc_strong_errors(s, spec, 1.0, points, McReference{5, std::nullopt}, lattice_level, 1, seed);

    const auto lat = sample_lattice(5, 1.0, lattice_level, replica_seed(seed, 0));
    const CoefficientField ref_em = em_terminal(s, CoefficientField(0), spec, 5, lat.fine());
    const CoefficientField ref_exact = exact_terminal_coupled(CoefficientField(0), spec, 5, lat);
    for (std::size_t p = 0; p < 2; ++p) {
        const CoefficientField approx =
            em_terminal(s, CoefficientField(0), spec, points[p].kappa, aggregate(lat, points[p].level)).resized(5);
        const double e1 = l2_norm_sq(approx - ref_em);
        const double e2 = l2_norm_sq(approx - ref_exact);
        EXPECT_NEAR(em_ref[p].mean_square, e1, 1e-12 * e1);
        EXPECT_NEAR(exact_ref[p].mean_square, e2, 1e-12 * e2);
    }
}

TEST(McStrongError, EqualLevelsGiveZero)
{
    const McEstimate e = mc_strong_error(Scheme::backward(), AngularPowerSpectrum(2.0), 4, 1.0, 5, 5, 6, 10, 1);
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.stderr_value, 0.0);
}

TEST(McStrongError, AgreesWithEmPairClosedForm)
{
    const AngularPowerSpectrum spec(2.0);
    const Scheme s = Scheme::backward();
    const McEstimate mc = mc_strong_error(s, spec, 8, 1.0, 6, 12, 12, 1000, 2468, 1);
    const double exact = em_pair_strong_error_exact(s, CoefficientField(0), spec, 8, 1.0, 6, 12);
    EXPECT_NEAR(mc.value, exact, 3.0 * mc.stderr_value);
}

TEST(McStrongError, DecreasesMonotonicallyInLevel)
{
    const AngularPowerSpectrum spec(2.0);
    std::vector<McPoint> points;
    std::vector<double> levels;
    for (int j = 2; j <= 8; ++j) {
        points.push_back({8, j});
        levels.push_back(j);
    }
    const auto est = mc_strong_errors(Scheme::backward(), spec, 1.0, points, McReference{8, 10}, 10, 200, 17);
    std::vector<double> values;
    for (const auto& e : est) {
        values.push_back(e.value);
    }
    EXPECT_DOUBLE_EQ(oracle::spearman(levels, values), -1.0);
}

TEST(McStrongError, ThreadCountDoesNotChangeEstimates)
{
    const AngularPowerSpectrum spec(2.0);
    const McPoint points[] = {{4, 3}, {4, 5}};
    const auto a = mc_strong_errors(Scheme::backward(), spec, 1.0, points, McReference{4, std::nullopt}, 7, 20, 3, 1);
    const auto b = mc_strong_errors(Scheme::backward(), spec, 1.0, points, McReference{4, std::nullopt}, 7, 20, 3, 3);
    for (std::size_t p = 0; p < 2; ++p) {
        EXPECT_EQ(a[p].value, b[p].value);
        EXPECT_EQ(a[p].stderr_value, b[p].stderr_value);
    }
}

TEST(McStrongError, ForwardStabilityIsCheckedPerPoint)
{
    const McPoint points[] = {{16, 2}};
    EXPECT_THROW((void)mc_strong_errors(Scheme::forward(), AngularPowerSpectrum(2.0), 1.0, points,
                                        McReference{16, 10}, 10, 2, 1),
                 StabilityError);
}

TEST(ExpectationError, ZeroMeanGivesZero)
{
    const CoefficientField zero(6);
    EXPECT_EQ(spectral_expectation_error(zero, 2, 0.1), 0.0);
    EXPECT_EQ(em_expectation_error(Scheme::backward(), zero, 6, 0.01, 100), 0.0);
}

TEST(ExpectationError, SingleModeTailIsTheDecayBound)
{
    for (int kappa : {1, 4, 9}) {
        CoefficientField mean(kappa + 1);
        mean.at(kappa + 1, 0) = -1.5;
        const double t = 0.01;
        const double want = std::exp(-(kappa + 1.0) * (kappa + 2.0) * t) * 1.5;
        EXPECT_NEAR(spectral_expectation_error(mean, kappa, t), want, 1e-15 * want);
    }
}

TEST(ExpectationError, SmallTailsDoNotUnderflow)
{
    // e^{-416} is representable although its square is not
    CoefficientField mean(64);
    mean.at(64, 0) = 2.0;
    mean.at(64, 5, Part::imag) = 1.0;
    const double want = std::exp(-64.0 * 65.0 * 0.1) * std::sqrt(4.0 + 2.0);
    ASSERT_GT(want, 0.0);
    EXPECT_NEAR(spectral_expectation_error(mean, 63, 0.1), want, 1e-14 * want);
    EXPECT_EQ(spectral_expectation_error(mean, 64, 0.1), 0.0);
}

TEST(ExpectationError, MatchesFieldDifference)
{
    CoefficientField mean(5);
    for (std::size_t c = 0; c < mean.size(); ++c) {
        mean[c] = std::cos(static_cast<double>(c));
    }
    const double h = 1.0 / 64.0;
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        const auto diff = spectral_expectation(mean, 5, 0.5) - em_expectation(s, mean, 5, h, 32);
        EXPECT_NEAR(em_expectation_error(s, mean, 5, h, 32), std::sqrt(l2_norm_sq(diff)), 1e-13);
    }
}

TEST(SecondMomentError, SpectralErrorIsSquaredStrongError)
{
    const AngularPowerSpectrum spec(2.0);
    for (int kappa : {1, 8, 100}) {
        const double strong = spectral_strong_error_exact(CoefficientField(0), spec, kappa, 1024, 0.01);
        const double moment = spectral_second_moment_error(CoefficientField(0), spec, kappa, 1024, 0.01);
        EXPECT_NEAR(moment, strong * strong, 1e-14 * moment);
        const double direct = spectral_second_moment(CoefficientField(0), spec, 1024, 0.01) -
                              spectral_second_moment(CoefficientField(0), spec, kappa, 0.01);
        EXPECT_NEAR(moment, direct, 1e-10 * moment);
    }
}

TEST(SecondMomentError, EmMatchesMomentDifference)
{
    const AngularPowerSpectrum spec(1.0, 1.0, 0.2);
    CoefficientField msq(4);
    msq.at(2, 1, Part::real) = 0.5;
    const double h = 1.0 / 64.0;
    for (const Scheme s : {Scheme::forward(), Scheme::backward()}) {
        const double direct = std::abs(spectral_second_moment(msq, spec, 4, 1.0) - em_second_moment(s, msq, spec, 4, h, 64));
        EXPECT_NEAR(em_second_moment_error(s, msq, spec, 4, h, 64), direct, 1e-12);
    }
}

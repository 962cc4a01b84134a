#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "sphere_spde/noise.hpp"

using namespace sphere_spde;

TEST(AngularPowerSpectrum, PowerExamples)
{
    const AngularPowerSpectrum two(2.0);
    EXPECT_EQ(power(two, 0), 0.0);
    EXPECT_EQ(power(two, 1), 1.0);
    EXPECT_EQ(power(AngularPowerSpectrum(4.0), 2), 0.0625);
    EXPECT_EQ(power(AngularPowerSpectrum(2.0, 3.0, 0.7), 0), 0.7);
    EXPECT_EQ(power(AngularPowerSpectrum(2.0, 3.0), 2), 0.75);
}

TEST(AngularPowerSpectrum, CutoffAndSilent)
{
    const AngularPowerSpectrum banded(1.0, 1.0, 0.0, 3);
    EXPECT_GT(banded.power(3), 0.0);
    EXPECT_EQ(banded.power(4), 0.0);
    const auto silent = AngularPowerSpectrum::silent();
    for (int l = 0; l < 10; ++l) {
        EXPECT_EQ(silent.power(l), 0.0);
    }
}

TEST(AngularPowerSpectrum, RejectsInvalidParameters)
{
    EXPECT_THROW(AngularPowerSpectrum(0.0), DomainError);
    EXPECT_THROW(AngularPowerSpectrum(1.0, -1.0), DomainError);
    EXPECT_THROW(AngularPowerSpectrum(1.0, 1.0, -0.1), DomainError);
    EXPECT_THROW((void)AngularPowerSpectrum(1.0).power(-1), DomainError);
}

TEST(AngularPowerSpectrum, ChannelIntensitySplitsPairs)
{
    const AngularPowerSpectrum spec(2.0, 4.0);
    EXPECT_EQ(spec.channel_intensity(channel_index(2, 0)), 1.0);
    EXPECT_EQ(spec.channel_intensity(channel_index(2, 1, Part::real)), 0.5);
    EXPECT_EQ(spec.channel_intensity(channel_index(2, 2, Part::imag)), 0.5);
}

TEST(TraceSobolev, Examples)
{
    EXPECT_EQ(trace_sobolev(AngularPowerSpectrum(3.0), 1.7, 0), 0.0);
    EXPECT_DOUBLE_EQ(trace_sobolev(AngularPowerSpectrum(3.0), 0.0, 1), 3.0);
}

TEST(TraceSobolev, FinitenessWitnessAndMonotonicity)
{
    const AngularPowerSpectrum spec(5.0);
    double previous = -1.0;
    std::vector<double> partial;
    for (int j = 4; j <= 10; ++j) {
        const double v = trace_sobolev(spec, 1.0, 1 << j);
        EXPECT_GE(v, previous);
        previous = v;
        partial.push_back(v);
    }
    EXPECT_LT(std::abs(partial.back() - partial[partial.size() - 2]) / partial.back(), 0.01);
}

TEST(Lattice, SameSeedIsBitIdentical)
{
    const auto a = sample_lattice(3, 1.0, 6, 99);
    const auto b = sample_lattice(3, 1.0, 6, 99);
    EXPECT_TRUE(a == b);
    EXPECT_FALSE(a == sample_lattice(3, 1.0, 6, 100));
    EXPECT_EQ(a.fine().channels(), 16u);
    EXPECT_EQ(a.fine().data.size(), 16u * 64u);
}

TEST(Lattice, ThreadCountDoesNotChangeValues)
{
    const auto serial = sample_lattice(6, 2.0, 5, 3);
    const auto threaded = sample_lattice(6, 2.0, 5, 3, LatticeOptions{std::size_t{1} << 30, 4});
    EXPECT_TRUE(serial == threaded);
    // A larger truncation shares the low-degree channels exactly.
    const auto bigger = sample_lattice(9, 2.0, 5, 3);
    for (std::size_t c = 0; c < serial.fine().channels(); ++c) {
        const auto x = serial.fine().channel(c);
        const auto y = bigger.fine().channel(c);
        EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    }
}

TEST(Lattice, IncrementMeanSatisfiesClt)
{
    // (kappa+1)^2 * 2^M = 100 * 1024 >= 1e5 draws
    const auto lat = sample_lattice(9, 1.0, 10, 2718);
    const auto& d = lat.fine().data;
    double sum = 0.0;
    for (double v : d) {
        sum += v;
    }
    const double n = static_cast<double>(d.size());
    EXPECT_LT(std::abs(sum / n), 4.0 * std::sqrt(lat.finest_step() / n));
}

TEST(Aggregate, IdentityAndPairSums)
{
    const auto lat = sample_lattice(2, 1.0, 4, 5);
    const IncrementTable same = aggregate(lat, 4);
    EXPECT_EQ(same.data, lat.fine().data);
    const IncrementTable half = aggregate(lat, 3);
    for (std::size_t c = 0; c < half.channels(); ++c) {
        const auto fine = lat.fine().channel(c);
        const auto coarse = half.channel(c);
        for (std::size_t i = 0; i < coarse.size(); ++i) {
            EXPECT_EQ(coarse[i], fine[2 * i] + fine[2 * i + 1]);
        }
    }
    EXPECT_EQ(half.step(), 1.0 / 8.0);
    EXPECT_THROW((void)aggregate(lat, 5), DomainError);
    EXPECT_THROW((void)aggregate(lat, -1), DomainError);
}

TEST(Aggregate, CouplingConsistencyIsExact)
{
    const auto lat = sample_lattice(4, 1.0, 9, 8);
    for (int j = 0; j < 9; ++j) {
        for (int jp = j + 1; jp <= 9; ++jp) {
            EXPECT_EQ(aggregate(lat, j).data, aggregate(aggregate(lat, jp), j).data) << j << " via " << jp;
        }
    }
}

TEST(Aggregate, CoarseIncrementVarianceMatchesStep)
{
    const double T = 2.0;
    const auto lat = sample_lattice(15, T, 10, 31);
    for (int j : {2, 5, 8}) {
        const IncrementTable t = aggregate(lat, j);
        double s2 = 0.0, s4 = 0.0;
        for (double v : t.data) {
            s2 += v * v;
            s4 += v * v * v * v;
        }
        const double n = static_cast<double>(t.data.size());
        const double var = s2 / n;
        const double se = std::sqrt((s4 / n - var * var) / n);
        EXPECT_NEAR(var, T * std::ldexp(1.0, -j), 3.0 * se) << "level " << j;
    }
}

TEST(Lattice, TruncatedWienerNormMatchesTrace)
{
    // ||W^(kappa)(T)||^2 = sum_c weight_c intensity_c (sum of increments)^2
    const int kappa = 16;
    const double T = 0.5;
    const AngularPowerSpectrum spec(2.5, 1.0, 0.3);
    const std::size_t n = 1000;
    std::vector<double> norms(n);
    for (std::size_t s = 0; s < n; ++s) {
        const auto lat = sample_lattice(kappa, T, 3, replica_seed(1234, s));
        double norm = 0.0;
        for (std::size_t c = 0; c < lat.fine().channels(); ++c) {
            double w = 0.0;
            for (double v : lat.fine().channel(c)) {
                w += v;
            }
            norm += channel_weight(c) * spec.channel_intensity(c) * w * w;
        }
        norms[s] = norm;
    }
    double mean = 0.0;
    for (double v : norms) {
        mean += v;
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : norms) {
        var += (v - mean) * (v - mean);
    }
    const double se = std::sqrt(var / static_cast<double>(n - 1) / static_cast<double>(n));
    EXPECT_NEAR(mean, T * trace_sobolev(spec, 0.0, kappa), 3.0 * se);
}

TEST(Lattice, MemoryBudgetIsEnforced)
{
    EXPECT_THROW((void)sample_lattice(100, 1.0, 10, 1, LatticeOptions{1u << 20, 1}), ResourceError);
    EXPECT_THROW((void)sample_lattice(-1, 1.0, 10, 1), DomainError);
    EXPECT_THROW((void)sample_lattice(1, 0.0, 10, 1), DomainError);
    EXPECT_EQ(lattice_bytes(1023, 0), 1024u * 1024u * 8u);
}

TEST(Lattice, BinaryRoundTrip)
{
    const auto lat = sample_lattice(3, 0.75, 5, 0xDEADBEEFCAFEull);
    std::stringstream buffer;
    save_lattice(buffer, lat);
    const std::string bytes = buffer.str();
    EXPECT_EQ(bytes.size(), 32u + 16u * 32u * 8u);
    // little-endian kappa in the first word
    EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 3u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[1]), 0u);
    std::stringstream in(bytes);
    const auto back = load_lattice(in);
    EXPECT_TRUE(back == lat);
}

TEST(Lattice, TruncatedFileIsRejected)
{
    const auto lat = sample_lattice(1, 1.0, 2, 1);
    std::stringstream buffer;
    save_lattice(buffer, lat);
    std::string bytes = buffer.str();
    bytes.resize(bytes.size() - 3);
    std::stringstream in(bytes);
    EXPECT_THROW((void)load_lattice(in), ConfigError);
}

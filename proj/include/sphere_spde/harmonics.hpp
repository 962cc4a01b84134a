#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sphere_spde/error.hpp"
#include "sphere_spde/numeric.hpp"

namespace sphere_spde {

/// Spherical-harmonic mode (l, m) with |m| <= l.
struct ModeIndex {
    int degree = 0;
    int order = 0;

    /// Laplace-Beltrami eigenvalue -l(l+1).
    [[nodiscard]] constexpr double eigenvalue() const noexcept
    {
        return -static_cast<double>(degree) * static_cast<double>(degree + 1);
    }
};

/// Decay rate l(l+1) of the degree-l Ornstein-Uhlenbeck modes.
[[nodiscard]] constexpr double decay_rate(int degree) noexcept
{
    return static_cast<double>(degree) * static_cast<double>(degree + 1);
}

/// Which real channel of a complex coefficient X_{l,m} (m >= 1) is meant.
enum class Part { real, imag };

// Real channel layout
// -------------------
// Degree l occupies channels [l^2, (l+1)^2). Inside a block, offset 0 holds
// X_{l,0}; offsets 2m-1 and 2m hold Re X_{l,m} and Im X_{l,m} for m = 1..l.
// Channel indices do not depend on the truncation, so fields and noise
// lattices of different truncations share their low-degree channels.

[[nodiscard]] constexpr std::size_t channel_count(int truncation) noexcept
{
    const auto n = static_cast<std::size_t>(truncation + 1);
    return n * n;
}

[[nodiscard]] constexpr std::size_t block_offset(int degree) noexcept
{
    const auto l = static_cast<std::size_t>(degree);
    return l * l;
}

[[nodiscard]] inline std::size_t channel_index(int degree, int order, Part part = Part::real)
{
    if (degree < 0 || order < 0 || order > degree) {
        throw DomainError("channel_index: need 0 <= m <= l, got l=" + std::to_string(degree) +
                          " m=" + std::to_string(order));
    }
    if (order == 0) {
        if (part == Part::imag) {
            throw DomainError("channel_index: the m = 0 mode has no imaginary channel");
        }
        return block_offset(degree);
    }
    return block_offset(degree) + static_cast<std::size_t>(2 * order - (part == Part::real ? 1 : 0));
}

/// Degree owning a channel: floor(sqrt(c)).
[[nodiscard]] inline int channel_degree(std::size_t channel) noexcept
{
    auto l = static_cast<std::size_t>(std::sqrt(static_cast<double>(channel)));
    while (l * l > channel) {
        --l;
    }
    while ((l + 1) * (l + 1) <= channel) {
        ++l;
    }
    return static_cast<int>(l);
}

/// L2 weight of a real channel: 1 for X_{l,0}, 2 for Re/Im channels (the
/// conjugate coefficient X_{l,-m} carries the same modulus).
[[nodiscard]] inline double channel_weight(std::size_t channel) noexcept
{
    return channel == block_offset(channel_degree(channel)) ? 1.0 : 2.0;
}

/// Truncated real-storage coefficient vector of a real field on the sphere.
class CoefficientField {
public:
    CoefficientField() : CoefficientField(0) {}

    explicit CoefficientField(int truncation)
        : truncation_(truncation)
    {
        if (truncation < 0) {
            throw DomainError("CoefficientField: truncation must be nonnegative");
        }
        values_.assign(channel_count(truncation), 0.0);
    }

    CoefficientField(int truncation, std::vector<double> values)
        : truncation_(truncation), values_(std::move(values))
    {
        if (truncation < 0 || values_.size() != channel_count(truncation)) {
            throw DomainError("CoefficientField: value count does not match (truncation+1)^2");
        }
    }

    [[nodiscard]] int truncation() const noexcept { return truncation_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }

    [[nodiscard]] double& operator[](std::size_t channel) { return values_[channel]; }
    [[nodiscard]] double operator[](std::size_t channel) const { return values_[channel]; }

    [[nodiscard]] std::span<double> values() noexcept { return values_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

    /// The 2l+1 channels of degree l.
    [[nodiscard]] std::span<const double> block(int degree) const
    {
        check_degree(degree);
        return std::span<const double>(values_).subspan(block_offset(degree),
                                                        static_cast<std::size_t>(2 * degree + 1));
    }
    [[nodiscard]] std::span<double> block(int degree)
    {
        check_degree(degree);
        return std::span<double>(values_).subspan(block_offset(degree),
                                                  static_cast<std::size_t>(2 * degree + 1));
    }

    [[nodiscard]] double& at(int degree, int order, Part part = Part::real)
    {
        check_degree(degree);
        return values_[channel_index(degree, order, part)];
    }
    [[nodiscard]] double at(int degree, int order, Part part = Part::real) const
    {
        check_degree(degree);
        return values_[channel_index(degree, order, part)];
    }

    /// Complex coefficient X_{l,m} for m in [-l, l], negative orders via
    /// X_{l,-m} = (-1)^m conj(X_{l,m}).
    [[nodiscard]] std::complex<double> complex_coefficient(int degree, int order) const
    {
        check_degree(degree);
        const int am = std::abs(order);
        if (am > degree) {
            throw DomainError("complex_coefficient: |m| > l");
        }
        if (am == 0) {
            return {values_[block_offset(degree)], 0.0};
        }
        const std::complex<double> positive{values_[channel_index(degree, am, Part::real)],
                                            values_[channel_index(degree, am, Part::imag)]};
        if (order > 0) {
            return positive;
        }
        return (am % 2 == 0 ? 1.0 : -1.0) * std::conj(positive);
    }

    /// Copy truncated (or zero-extended) to a different truncation.
    [[nodiscard]] CoefficientField resized(int truncation) const
    {
        CoefficientField out(truncation);
        const std::size_t n = std::min(out.size(), size());
        std::copy_n(values_.begin(), n, out.values_.begin());
        return out;
    }

    CoefficientField& operator+=(const CoefficientField& other)
    {
        require_same_shape(other);
        for (std::size_t i = 0; i < values_.size(); ++i) {
            values_[i] += other.values_[i];
        }
        return *this;
    }
    CoefficientField& operator-=(const CoefficientField& other)
    {
        require_same_shape(other);
        for (std::size_t i = 0; i < values_.size(); ++i) {
            values_[i] -= other.values_[i];
        }
        return *this;
    }
    CoefficientField& operator*=(double scale) noexcept
    {
        for (double& v : values_) {
            v *= scale;
        }
        return *this;
    }

    friend CoefficientField operator+(CoefficientField a, const CoefficientField& b) { return a += b; }
    friend CoefficientField operator-(CoefficientField a, const CoefficientField& b) { return a -= b; }
    friend CoefficientField operator*(double s, CoefficientField a) { return a *= s; }

    friend bool operator==(const CoefficientField&, const CoefficientField&) = default;

private:
    void check_degree(int degree) const
    {
        if (degree < 0 || degree > truncation_) {
            throw DomainError("CoefficientField: degree " + std::to_string(degree) +
                              " outside [0, " + std::to_string(truncation_) + "]");
        }
    }
    void require_same_shape(const CoefficientField& other) const
    {
        if (other.truncation_ != truncation_) {
            throw DomainError("CoefficientField: truncation mismatch");
        }
    }

    int truncation_ = 0;
    std::vector<double> values_;
};

/// Parseval sum sum_l (1 + l(l+1))^s ( c_{l,0}^2 + 2 sum_m (a^2 + b^2) ).
[[nodiscard]] inline double sobolev_norm_sq(const CoefficientField& field, double s)
{
    CompensatedSum total;
    for (int l = 0; l <= field.truncation(); ++l) {
        const auto blk = field.block(l);
        CompensatedSum degree_sum;
        degree_sum += blk[0] * blk[0];
        for (std::size_t i = 1; i < blk.size(); ++i) {
            degree_sum += 2.0 * blk[i] * blk[i];
        }
        const double weight = s == 0.0 ? 1.0 : std::pow(1.0 + decay_rate(l), s);
        total += weight * degree_sum.value();
    }
    return total.value();
}

[[nodiscard]] inline double l2_norm_sq(const CoefficientField& field)
{
    return sobolev_norm_sq(field, 0.0);
}

// Legendre functions
// ------------------

/// Legendre polynomial P_l(mu) by the Bonnet recurrence.
[[nodiscard]] inline double legendre(int degree, double mu)
{
    if (degree < 0) {
        throw DomainError("legendre: negative degree");
    }
    if (!(std::abs(mu) <= 1.0)) {
        throw DomainError("legendre: |mu| > 1");
    }
    if (degree == 0) {
        return 1.0;
    }
    double previous = 1.0;
    double current = mu;
    for (int l = 2; l <= degree; ++l) {
        const double next = ((2.0 * l - 1.0) * mu * current - (l - 1.0) * previous) / l;
        previous = current;
        current = next;
    }
    return current;
}

/// Orthonormalised associated Legendre values
/// sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_{l,m}(mu) for all 0 <= m <= l <= L,
/// Condon-Shortley phase included, stored at index l(l+1)/2 + m.
class NormalizedLegendreTable {
public:
    NormalizedLegendreTable(int max_degree, double mu)
        : max_degree_(max_degree), values_(triangle_size(max_degree), 0.0)
    {
        if (max_degree < 0) {
            throw DomainError("NormalizedLegendreTable: negative degree");
        }
        if (!(std::abs(mu) <= 1.0)) {
            throw DomainError("NormalizedLegendreTable: |mu| > 1");
        }
        const double sine = std::sqrt(std::max(0.0, (1.0 - mu) * (1.0 + mu)));
        double diagonal = 1.0 / std::sqrt(4.0 * numeric::pi);
        for (int m = 0; m <= max_degree; ++m) {
            if (m > 0) {
                diagonal *= -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * sine;
            }
            value(m, m) = diagonal;
            if (m + 1 <= max_degree) {
                value(m + 1, m) = std::sqrt(2.0 * m + 3.0) * mu * diagonal;
            }
            for (int l = m + 2; l <= max_degree; ++l) {
                const double ll = l;
                const double mm = m;
                const double a = std::sqrt((4.0 * ll * ll - 1.0) / (ll * ll - mm * mm));
                const double b = std::sqrt(((ll - 1.0) * (ll - 1.0) - mm * mm) /
                                           (4.0 * (ll - 1.0) * (ll - 1.0) - 1.0));
                value(l, m) = a * (mu * value(l - 1, m) - b * value(l - 2, m));
            }
        }
    }

    [[nodiscard]] int max_degree() const noexcept { return max_degree_; }

    [[nodiscard]] double operator()(int degree, int order) const
    {
        return values_[index(degree, order)];
    }

private:
    static std::size_t triangle_size(int max_degree)
    {
        const auto n = static_cast<std::size_t>(std::max(max_degree, 0) + 1);
        return n * (n + 1) / 2;
    }
    static std::size_t index(int degree, int order)
    {
        const auto l = static_cast<std::size_t>(degree);
        return l * (l + 1) / 2 + static_cast<std::size_t>(order);
    }
    double& value(int degree, int order) { return values_[index(degree, order)]; }

    int max_degree_;
    std::vector<double> values_;
};

/// Associated Legendre function P_{l,m}(mu) = (-1)^m (1-mu^2)^{m/2} d^m/dmu^m P_l(mu).
/// Obtained from the normalised recurrence; the factorial ratio is applied in
/// log space so large degrees do not overflow intermediates.
[[nodiscard]] inline double associated_legendre(int degree, int order, double mu)
{
    if (degree < 0 || order < 0 || order > degree) {
        throw DomainError("associated_legendre: need 0 <= m <= l");
    }
    if (!(std::abs(mu) <= 1.0)) {
        throw DomainError("associated_legendre: |mu| > 1");
    }
    if (order == 0) {
        return legendre(degree, mu);
    }
    const NormalizedLegendreTable table(degree, mu);
    const double log_scale =
        0.5 * (std::log(4.0 * numeric::pi / (2.0 * degree + 1.0)) +
               std::lgamma(degree + order + 1.0) - std::lgamma(degree - order + 1.0));
    return table(degree, order) * std::exp(log_scale);
}

namespace detail {
inline void check_angles(double theta, double phi)
{
    if (!(theta >= 0.0 && theta <= numeric::pi)) {
        throw DomainError("colatitude outside [0, pi]");
    }
    if (!(phi >= 0.0 && phi < 2.0 * numeric::pi)) {
        throw DomainError("longitude outside [0, 2 pi)");
    }
}
} // namespace detail

/// Orthonormal complex spherical harmonic Y_{l,m}(theta, phi).
[[nodiscard]] inline std::complex<double> sph_harm(int degree, int order, double theta, double phi)
{
    if (degree < 0 || std::abs(order) > degree) {
        throw DomainError("sph_harm: need |m| <= l");
    }
    detail::check_angles(theta, phi);
    const int am = std::abs(order);
    const NormalizedLegendreTable table(degree, std::cos(theta));
    const std::complex<double> positive = std::polar(table(degree, am), am * phi);
    if (order >= 0) {
        return positive;
    }
    return (am % 2 == 0 ? 1.0 : -1.0) * std::conj(positive);
}

/// Point on the sphere in polar coordinates.
struct SpherePoint {
    double theta = 0.0; ///< colatitude in [0, pi]
    double phi = 0.0;   ///< longitude in [0, 2 pi)
};

/// Cartesian embedding (sin t cos p, sin t sin p, cos t).
[[nodiscard]] inline std::array<double, 3> to_cartesian(const SpherePoint& p) noexcept
{
    return {std::sin(p.theta) * std::cos(p.phi), std::sin(p.theta) * std::sin(p.phi),
            std::cos(p.theta)};
}

/// Pointwise values of the real expansion
/// X_{l,0} Y_{l,0} + sum_m 2 Re X_{l,m} Re Y_{l,m} - 2 Im X_{l,m} Im Y_{l,m}.
[[nodiscard]] inline std::vector<double> evaluate_field(const CoefficientField& field,
                                                        std::span<const SpherePoint> grid)
{
    std::vector<double> out;
    out.reserve(grid.size());
    const int kappa = field.truncation();
    std::vector<double> cos_m(static_cast<std::size_t>(kappa + 1));
    std::vector<double> sin_m(static_cast<std::size_t>(kappa + 1));
    for (const SpherePoint& p : grid) {
        detail::check_angles(p.theta, p.phi);
        const NormalizedLegendreTable table(kappa, std::cos(p.theta));
        for (int m = 0; m <= kappa; ++m) {
            cos_m[static_cast<std::size_t>(m)] = std::cos(m * p.phi);
            sin_m[static_cast<std::size_t>(m)] = std::sin(m * p.phi);
        }
        double value = 0.0;
        for (int l = 0; l <= kappa; ++l) {
            const auto blk = field.block(l);
            value += blk[0] * table(l, 0);
            for (int m = 1; m <= l; ++m) {
                const double p_lm = table(l, m);
                const auto mi = static_cast<std::size_t>(m);
                value += 2.0 * p_lm *
                         (blk[2 * mi - 1] * cos_m[mi] - blk[2 * mi] * sin_m[mi]);
            }
        }
        out.push_back(value);
    }
    return out;
}

} // namespace sphere_spde

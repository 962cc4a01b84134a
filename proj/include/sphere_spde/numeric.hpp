#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace sphere_spde {

/// Neumaier-compensated accumulator. Error tails span many orders of
/// magnitude, so every closed-form sum in the library goes through this.
class CompensatedSum {
public:
    constexpr CompensatedSum() = default;

    constexpr void add(double value) noexcept
    {
        const double t = sum_ + value;
        if (std::abs(sum_) >= std::abs(value)) {
            compensation_ += (sum_ - t) + value;
        } else {
            compensation_ += (value - t) + sum_;
        }
        sum_ = t;
    }

    constexpr CompensatedSum& operator+=(double value) noexcept
    {
        add(value);
        return *this;
    }

    [[nodiscard]] constexpr double value() const noexcept { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

namespace numeric {

inline constexpr double pi = 3.14159265358979323846;

// Below this argument the alternating closed forms lose more than ~1e-12
// relative accuracy and their Taylor series are used instead.
inline constexpr double series_threshold = 0.5;

/// (1 - e^{-x}) / x, with the x -> 0 limit 1.
inline double one_minus_exp_ratio(double x) noexcept
{
    if (x == 0.0) {
        return 1.0;
    }
    return -std::expm1(-x) / x;
}

/// Integral over w in [0,1] of (e^{-xw} - 1)^2, i.e.
/// (1 - e^{-2x})/(2x) - 2(1 - e^{-x})/x + 1.
inline double squared_decay_gap(double x) noexcept
{
    if (x < series_threshold) {
        // sum_{n>=2} (-1)^n (2^n - 2) x^n / (n+1)!
        double sum = 0.0;
        double power_of_two = 2.0;
        double x_over_fact = x / 2.0; // x^n/(n+1)! at n = 1
        for (int n = 2; n < 60; ++n) {
            power_of_two *= 2.0;
            x_over_fact *= x / static_cast<double>(n + 1);
            const double term = (power_of_two - 2.0) * x_over_fact;
            sum += (n % 2 == 0) ? term : -term;
            if (term < 1e-18 * std::abs(sum)) {
                break;
            }
        }
        return sum;
    }
    return one_minus_exp_ratio(2.0 * x) - 2.0 * one_minus_exp_ratio(x) + 1.0;
}

/// Integral over w in [0,1] of (1 - e^{-xw}), i.e. 1 - (1 - e^{-x})/x.
inline double linear_decay_gap(double x) noexcept
{
    if (x < series_threshold) {
        // sum_{n>=1} (-1)^{n+1} x^n / (n+1)!
        double sum = 0.0;
        double term = 1.0;
        for (int n = 1; n < 60; ++n) {
            term *= x / static_cast<double>(n + 1);
            sum += (n % 2 == 1) ? term : -term;
            if (term < 1e-18 * std::abs(sum)) {
                break;
            }
        }
        return sum;
    }
    return 1.0 - one_minus_exp_ratio(x);
}

/// Variance of e^{-xU} for U uniform on [0,1]:
/// (1 - e^{-2x})/(2x) - ((1 - e^{-x})/x)^2.
inline double bridge_residual_factor(double x) noexcept
{
    if (x < 0.1) {
        static constexpr double coefficients[] = {
            1.0 / 12.0,           -1.0 / 12.0,          17.0 / 360.0,
            -7.0 / 360.0,         43.0 / 6720.0,        -107.0 / 60480.0,
            769.0 / 1814400.0,    -163.0 / 1814400.0,   4097.0 / 239500800.0,
            -709.0 / 239500800.0,
        };
        double sum = 0.0;
        double power = x * x;
        for (double c : coefficients) {
            sum += c * power;
            power *= x;
        }
        return sum;
    }
    const double g = one_minus_exp_ratio(x);
    return one_minus_exp_ratio(2.0 * x) - g * g;
}

/// (e^y - 1)/y - 1 = sum_{n>=1} y^n/(n+1)!, for y >= 0.
inline double growth_gap(double y) noexcept
{
    if (y < series_threshold) {
        double sum = 0.0;
        double term = 1.0;
        for (int n = 1; n < 60; ++n) {
            term *= y / static_cast<double>(n + 1);
            sum += term;
            if (term < 1e-18 * sum) {
                break;
            }
        }
        return sum;
    }
    return std::expm1(y) / y - 1.0;
}

/// Integral over w in [0,1] of (e^{xw} - 1)^2, for x >= 0.
inline double squared_growth_gap(double x) noexcept
{
    if (x < series_threshold) {
        // sum_{n>=2} (2^n - 2) x^n / (n+1)!
        double sum = 0.0;
        double power_of_two = 2.0;
        double x_over_fact = x / 2.0;
        for (int n = 2; n < 60; ++n) {
            power_of_two *= 2.0;
            x_over_fact *= x / static_cast<double>(n + 1);
            const double term = (power_of_two - 2.0) * x_over_fact;
            sum += term;
            if (term < 1e-18 * sum) {
                break;
            }
        }
        return sum;
    }
    return (growth_gap(2.0 * x) + 1.0) - 2.0 * (growth_gap(x) + 1.0) + 1.0;
}

/// log(1 + y) - y for y > -1, accurate near 0.
inline double log1p_minus_identity(double y) noexcept
{
    if (std::abs(y) < 0.1) {
        // sum_{n>=2} (-1)^{n+1} y^n / n
        double sum = 0.0;
        double power = y;
        for (int n = 2; n < 40; ++n) {
            power *= y;
            const double term = power / static_cast<double>(n);
            sum += (n % 2 == 0) ? -term : term;
            if (std::abs(term) < 1e-18 * std::abs(sum)) {
                break;
            }
        }
        return sum;
    }
    return std::log1p(y) - y;
}

/// sum_{n=0}^{k-1} e^{-c n} for c >= 0.
inline double geometric_sum_exp(double c, std::int64_t k) noexcept
{
    if (k <= 0) {
        return 0.0;
    }
    if (c == 0.0) {
        return static_cast<double>(k);
    }
    return std::expm1(-c * static_cast<double>(k)) / std::expm1(-c);
}

} // namespace numeric
} // namespace sphere_spde

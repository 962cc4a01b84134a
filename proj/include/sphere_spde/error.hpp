#pragma once

#include <stdexcept>
#include <string>

namespace sphere_spde {

/// Argument outside the mathematical domain of an operation (|mu| > 1, |m| > l, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Forward Euler step violating the admissibility gate kappa(kappa+1)h <= C_c.
class StabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Requested allocation exceeds the configured memory budget.
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Too few usable points for a fit, empty sweep grids and similar.
class DegenerateInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace sphere_spde

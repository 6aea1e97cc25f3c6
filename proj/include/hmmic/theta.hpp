#pragma once

/** @file
 * Parameter vectors and the componentwise bijection between a model's
 * natural parameterization and unconstrained real coordinates.
 *
 *   autoregressive coefficient  phi in (-1, 1)  <->  atanh(phi)
 *   scale                       sigma > 0       <->  log(sigma)
 *   probability                 p in (0, 1)     <->  logit(p)
 */

#include "errors.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <string>

namespace hmmic {

enum class ParamKind { coefficient, scale, probability };

namespace detail {

inline bool in_interior(ParamKind kind, double v) {
    switch (kind) {
        case ParamKind::coefficient: return std::isfinite(v) && std::abs(v) < 1.0;
        case ParamKind::scale: return std::isfinite(v) && v > 0.0;
        case ParamKind::probability: return std::isfinite(v) && v > 0.0 && v < 1.0;
    }
    return false;
}

// Closure of the constraint set; simulation accepts degenerate values such
// as sigma = 0 or p = 0 that switch a noise component off.
inline bool in_closure(ParamKind kind, double v) {
    switch (kind) {
        case ParamKind::coefficient: return std::isfinite(v) && std::abs(v) < 1.0;
        case ParamKind::scale: return std::isfinite(v) && v >= 0.0;
        case ParamKind::probability: return std::isfinite(v) && v >= 0.0 && v <= 1.0;
    }
    return false;
}

inline double forward(ParamKind kind, double v) {
    switch (kind) {
        case ParamKind::coefficient: return std::atanh(v);
        case ParamKind::scale: return std::log(v);
        case ParamKind::probability: return std::log(v) - std::log1p(-v);
    }
    return v;
}

inline double inverse(ParamKind kind, double u) {
    switch (kind) {
        case ParamKind::coefficient: return std::tanh(u);
        case ParamKind::scale: return std::exp(u);
        case ParamKind::probability: return 1.0 / (1.0 + std::exp(-u));
    }
    return u;
}

/// d(natural)/d(unconstrained) evaluated at the natural value.
inline double jacobian(ParamKind kind, double natural) {
    switch (kind) {
        case ParamKind::coefficient: return 1.0 - natural * natural;
        case ParamKind::scale: return natural;
        case ParamKind::probability: return natural * (1.0 - natural);
    }
    return 1.0;
}

// Box on the unconstrained coordinates inside which inverse() stays in the
// open interior in double precision.
inline double unconstrained_limit(ParamKind kind) {
    switch (kind) {
        case ParamKind::coefficient: return 15.0;
        case ParamKind::scale: return 30.0;
        case ParamKind::probability: return 30.0;
    }
    return 30.0;
}

}  // namespace detail

template <class Model>
void check_interior(const std::array<double, Model::dim>& natural) {
    for (std::size_t k = 0; k < Model::dim; ++k) {
        if (!detail::in_interior(Model::kinds[k], natural[k])) {
            throw ParameterDomainError(std::string(Model::name) + ": parameter " +
                                       std::string(Model::param_names[k]) + "=" +
                                       std::to_string(natural[k]) +
                                       " is outside the open constraint set");
        }
    }
}

template <class Model>
void check_closure(const std::array<double, Model::dim>& natural) {
    for (std::size_t k = 0; k < Model::dim; ++k) {
        if (!detail::in_closure(Model::kinds[k], natural[k])) {
            throw ParameterDomainError(std::string(Model::name) + ": parameter " +
                                       std::string(Model::param_names[k]) + "=" +
                                       std::to_string(natural[k]) + " is not admissible");
        }
    }
}

template <class Model>
std::array<double, Model::dim> to_unconstrained(const std::array<double, Model::dim>& natural) {
    check_interior<Model>(natural);
    std::array<double, Model::dim> out{};
    for (std::size_t k = 0; k < Model::dim; ++k) out[k] = detail::forward(Model::kinds[k], natural[k]);
    return out;
}

/// Inverse transform; throws when `v` lands on the boundary in floating point.
template <class Model>
std::array<double, Model::dim> to_natural(const std::array<double, Model::dim>& v) {
    std::array<double, Model::dim> out{};
    for (std::size_t k = 0; k < Model::dim; ++k) out[k] = detail::inverse(Model::kinds[k], v[k]);
    check_interior<Model>(out);
    return out;
}

/// Clamp unconstrained coordinates into the box where to_natural succeeds.
template <class Model>
std::array<double, Model::dim> clamp_unconstrained(std::array<double, Model::dim> v) {
    for (std::size_t k = 0; k < Model::dim; ++k) {
        const double lim = detail::unconstrained_limit(Model::kinds[k]);
        if (!(v[k] > -lim)) v[k] = -lim;
        if (v[k] > lim) v[k] = lim;
    }
    return v;
}

/**
 * A validated parameter vector of `Model`, always in the open constraint set.
 */
template <class Model>
class Theta {
public:
    using Vector = std::array<double, Model::dim>;

    static Theta from_natural(const Vector& natural) {
        check_interior<Model>(natural);
        return Theta(natural);
    }

    static Theta from_unconstrained(const Vector& v) { return Theta(to_natural<Model>(v)); }

    const Vector& natural() const noexcept { return natural_; }
    double operator[](std::size_t k) const noexcept { return natural_[k]; }

    Vector unconstrained() const {
        Vector out{};
        for (std::size_t k = 0; k < Model::dim; ++k)
            out[k] = detail::forward(Model::kinds[k], natural_[k]);
        return out;
    }

    /// Chain rule: maps a gradient in natural coordinates to unconstrained ones.
    Vector to_unconstrained_gradient(const Vector& grad_natural) const {
        Vector out{};
        for (std::size_t k = 0; k < Model::dim; ++k)
            out[k] = grad_natural[k] * detail::jacobian(Model::kinds[k], natural_[k]);
        return out;
    }

    friend bool operator==(const Theta&, const Theta&) = default;

private:
    explicit Theta(const Vector& natural) : natural_(natural) {}
    Vector natural_;
};

}  // namespace hmmic

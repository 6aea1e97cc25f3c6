#pragma once

/** @file
 * Hidden Markov models with a scalar latent state.
 *
 * A model type `M` exposes compile-time metadata (`dim`, `name`,
 * `param_names`, `kinds`) and is constructed from natural parameters; the
 * constructed object evaluates the kernels at those parameters:
 *
 *   log_q(x_prev, x), grad_log_q(x_prev, x)      transition density
 *   log_g(y, x),      grad_log_g(y, x)           observation density
 *   sample_initial(z), grad_log_initial(x)       initial law
 *   sample_transition(x_prev, z), sample_observation(x, draws)
 *
 * Gradients are with respect to the natural parameters. Constructors do not
 * validate; use Theta or check_closure() at the call site.
 */

#include "errors.hpp"
#include "rng.hpp"
#include "theta.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace hmmic {

inline constexpr double log_sqrt_2pi = 0.91893853320467274178;

/// log N(y; 0, v)
inline double log_normal_centered(double y, double variance) {
    return -log_sqrt_2pi - 0.5 * std::log(variance) - 0.5 * y * y / variance;
}

inline double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

/**
 * Uniform draws consumed by one simulated time step, in this order:
 * state noise W, observation noise V, jump indicator q, jump size J.
 * Every model consumes all four so nested models stay path-coupled under a
 * common seed.
 */
struct StepDraws {
    double w;
    double v;
    double q;
    double j;

    static StepDraws draw(SplitMix64& rng) {
        StepDraws d{};
        d.w = rng.uniform();
        d.v = rng.uniform();
        d.q = rng.uniform();
        d.j = rng.uniform();
        return d;
    }
};

namespace detail {

// Gaussian AR(1) transition shared by all models: x = phi * x_prev + sigma * W.
struct Ar1Transition {
    double phi;
    double sigma;
    double log_norm;
    double inv_var;

    Ar1Transition(double phi_, double sigma_)
        : phi(phi_), sigma(sigma_), log_norm(-log_sqrt_2pi - std::log(sigma_)),
          inv_var(1.0 / (sigma_ * sigma_)) {}

    double log_density(double x_prev, double x) const {
        const double r = x - phi * x_prev;
        return log_norm - 0.5 * r * r * inv_var;
    }
    double d_phi(double x_prev, double x) const { return (x - phi * x_prev) * x_prev * inv_var; }
    double d_sigma(double x_prev, double x) const {
        const double r = x - phi * x_prev;
        return (r * r * inv_var - 1.0) / sigma;
    }
};

}  // namespace detail

/**
 * x_t = phi x_{t-1} + sigma_x W_t,  y_t = x_t + sigma_v V_t,
 * x_0 drawn from the stationary law N(0, sigma_x^2 / (1 - phi^2)).
 */
class LinearGaussian {
public:
    static constexpr std::size_t dim = 3;
    using Params = std::array<double, dim>;
    static constexpr std::string_view name = "lg";
    static constexpr std::array<std::string_view, dim> param_names{"phi", "sigma_x", "sigma_v"};
    static constexpr std::array<ParamKind, dim> kinds{ParamKind::coefficient, ParamKind::scale,
                                                      ParamKind::scale};

    explicit LinearGaussian(const Params& p)
        : p_(p), trans_(p[0], p[1]), obs_var_(p[2] * p[2]),
          stat_var_(p[1] * p[1] / (1.0 - p[0] * p[0])) {}

    const Params& params() const noexcept { return p_; }
    double stationary_variance() const noexcept { return stat_var_; }

    const detail::Ar1Transition& ar1() const noexcept { return trans_; }

    double log_q(double x_prev, double x) const { return trans_.log_density(x_prev, x); }
    Params grad_log_q(double x_prev, double x) const {
        return {trans_.d_phi(x_prev, x), trans_.d_sigma(x_prev, x), 0.0};
    }

    double log_g(double y, double x) const { return log_normal_centered(y - x, obs_var_); }
    Params grad_log_g(double y, double x) const {
        const double r = y - x;
        return {0.0, 0.0, (r * r / obs_var_ - 1.0) / p_[2]};
    }

    double sample_initial(double z) const { return std::sqrt(stat_var_) * z; }
    double log_initial(double x) const { return log_normal_centered(x, stat_var_); }
    Params grad_log_initial(double x) const {
        const double phi = p_[0], s = p_[1];
        const double one_m = 1.0 - phi * phi;
        const double dl_dv = -0.5 / stat_var_ + 0.5 * x * x / (stat_var_ * stat_var_);
        return {dl_dv * 2.0 * phi * s * s / (one_m * one_m), dl_dv * 2.0 * s / one_m, 0.0};
    }

    double sample_transition(double x_prev, double z) const { return p_[0] * x_prev + p_[1] * z; }
    double sample_observation(double x, const StepDraws& d) const {
        return x + p_[2] * SplitMix64::standard_normal_quantile(d.v);
    }

private:
    Params p_;
    detail::Ar1Transition trans_;
    double obs_var_;
    double stat_var_;
};

/**
 * Stochastic volatility: x_t = phi x_{t-1} + sigma_x W_t,
 * y_t = exp(x_t / 2) V_t, x_0 = 0.
 */
class StochasticVolatility {
public:
    static constexpr std::size_t dim = 2;
    using Params = std::array<double, dim>;
    static constexpr std::string_view name = "sv";
    static constexpr std::array<std::string_view, dim> param_names{"phi", "sigma_x"};
    static constexpr std::array<ParamKind, dim> kinds{ParamKind::coefficient, ParamKind::scale};

    explicit StochasticVolatility(const Params& p) : p_(p), trans_(p[0], p[1]) {}

    const Params& params() const noexcept { return p_; }

    const detail::Ar1Transition& ar1() const noexcept { return trans_; }

    double log_q(double x_prev, double x) const { return trans_.log_density(x_prev, x); }
    Params grad_log_q(double x_prev, double x) const {
        return {trans_.d_phi(x_prev, x), trans_.d_sigma(x_prev, x)};
    }

    double log_g(double y, double x) const {
        return -log_sqrt_2pi - 0.5 * x - 0.5 * y * y * std::exp(-x);
    }
    Params grad_log_g(double, double) const { return {}; }

    double sample_initial(double) const { return 0.0; }
    Params grad_log_initial(double) const { return {}; }

    double sample_transition(double x_prev, double z) const { return p_[0] * x_prev + p_[1] * z; }
    double sample_observation(double x, const StepDraws& d) const {
        return std::exp(0.5 * x) * SplitMix64::standard_normal_quantile(d.v);
    }

private:
    Params p_;
    detail::Ar1Transition trans_;
};

/**
 * Stochastic volatility with jumps: as StochasticVolatility plus
 * y_t += q_t J_t with q_t ~ Bernoulli(p), J_t ~ N(0, sigma_j^2).
 *
 * Marginalizing q_t gives the observation density
 *   g(y | x) = (1 - p) N(y; 0, e^x) + p N(y; 0, e^x + sigma_j^2).
 * With p = 0 it coincides with StochasticVolatility on the leading block.
 */
class StochasticVolatilityJumps {
public:
    static constexpr std::size_t dim = 4;
    using Params = std::array<double, dim>;
    static constexpr std::string_view name = "svj";
    static constexpr std::array<std::string_view, dim> param_names{"phi", "sigma_x", "sigma_j", "p"};
    static constexpr std::array<ParamKind, dim> kinds{ParamKind::coefficient, ParamKind::scale,
                                                      ParamKind::scale, ParamKind::probability};

    explicit StochasticVolatilityJumps(const Params& p)
        : p_(p), trans_(p[0], p[1]), jump_var_(p[2] * p[2]), log_p_(std::log(p[3])),
          log_1mp_(std::log1p(-p[3])) {}

    const Params& params() const noexcept { return p_; }

    const detail::Ar1Transition& ar1() const noexcept { return trans_; }

    double log_q(double x_prev, double x) const { return trans_.log_density(x_prev, x); }
    Params grad_log_q(double x_prev, double x) const {
        return {trans_.d_phi(x_prev, x), trans_.d_sigma(x_prev, x), 0.0, 0.0};
    }

    double log_g(double y, double x) const {
        const double v1 = std::exp(x);
        return log_add_exp(log_1mp_ + log_normal_centered(y, v1),
                           log_p_ + log_normal_centered(y, v1 + jump_var_));
    }

    Params grad_log_g(double y, double x) const {
        const double v1 = std::exp(x);
        const double v2 = v1 + jump_var_;
        const double l1 = log_normal_centered(y, v1);
        const double l2 = log_normal_centered(y, v2);
        const double lg = log_add_exp(log_1mp_ + l1, log_p_ + l2);
        // Posterior probability of the jump component.
        const double r2 = std::exp(log_p_ + l2 - lg);
        const double dl2_dv = -0.5 / v2 + 0.5 * y * y / (v2 * v2);
        return {0.0, 0.0, r2 * dl2_dv * 2.0 * p_[2], std::exp(l2 - lg) - std::exp(l1 - lg)};
    }

    double sample_initial(double) const { return 0.0; }
    Params grad_log_initial(double) const { return {}; }

    double sample_transition(double x_prev, double z) const { return p_[0] * x_prev + p_[1] * z; }
    double sample_observation(double x, const StepDraws& d) const {
        const double base = std::exp(0.5 * x) * SplitMix64::standard_normal_quantile(d.v);
        const double jump = p_[2] * SplitMix64::standard_normal_quantile(d.j);
        return d.q < p_[3] ? base + jump : base;
    }

private:
    Params p_;
    detail::Ar1Transition trans_;
    double jump_var_;
    double log_p_;
    double log_1mp_;
};

/// Log-density value and its gradient in natural coordinates.
template <std::size_t D>
struct DensityEval {
    double log_density;
    std::array<double, D> gradient;
};

template <class Model>
DensityEval<Model::dim> eval_observation(const Theta<Model>& theta, double y, double x) {
    const Model m(theta.natural());
    return {m.log_g(y, x), m.grad_log_g(y, x)};
}

template <class Model>
DensityEval<Model::dim> eval_transition(const Theta<Model>& theta, double x_prev, double x) {
    const Model m(theta.natural());
    return {m.log_q(x_prev, x), m.grad_log_q(x_prev, x)};
}

struct Trajectory {
    std::vector<double> states;
    std::vector<double> observations;
    std::uint64_t seed = 0;
    std::string model_name;
    std::vector<double> theta;

    std::size_t size() const noexcept { return observations.size(); }
};

/**
 * Simulates x_{0:n-1}, y_{0:n-1}. Each step consumes exactly four uniforms
 * (StepDraws); at t = 0 the W draw feeds the initial law.
 *
 * Parameters may sit on the closure of the constraint set (sigma = 0, p = 0
 * or 1) which disables the corresponding noise term.
 */
template <class Model>
Trajectory simulate(const typename Model::Params& params, std::size_t n, std::uint64_t seed) {
    check_closure<Model>(params);
    if (n == 0) throw ParameterDomainError("simulate: n must be positive");
    const Model model(params);
    SplitMix64 rng(seed);
    Trajectory out;
    out.states.resize(n);
    out.observations.resize(n);
    out.seed = seed;
    out.model_name = std::string(Model::name);
    out.theta.assign(params.begin(), params.end());
    double x = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const StepDraws d = StepDraws::draw(rng);
        const double z = SplitMix64::standard_normal_quantile(d.w);
        x = (t == 0) ? model.sample_initial(z) : model.sample_transition(x, z);
        out.states[t] = x;
        out.observations[t] = model.sample_observation(x, d);
    }
    return out;
}

}  // namespace hmmic

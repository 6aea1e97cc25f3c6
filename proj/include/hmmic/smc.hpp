#pragma once

/** @file
 * Bootstrap particle filter with log-likelihood estimation and the O(N^2)
 * particle approximation of the score.
 *
 * Score tags: alpha_t^(i) approximates grad log p(x_t^(i), y_{0:t}). Each
 * step forms it as a mixture over the previous weighted cloud,
 *
 *   alpha_t^(i) = grad log g(y_t | x_t^(i))
 *               + sum_j wt_ij { grad log q(x_t^(i) | x_{t-1}^(j)) + alpha_{t-1}^(j) },
 *   wt_ij      ∝ w_{t-1}^(j) q(x_t^(i) | x_{t-1}^(j)),
 *
 * and the score estimate is sum_i w_t^(i) alpha_t^(i).
 *
 * Random number layout per step t >= 1: the resampling block (1 uniform for
 * systematic, N for multinomial) is always consumed, whether or not
 * resampling triggers, followed by N normals for propagation. Step 0
 * consumes N normals for the initial draw. Filters run with the same seed
 * at nearby parameters therefore share their random numbers.
 */

#include "errors.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "theta.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace hmmic {

enum class ResamplingScheme { multinomial, systematic };

struct FilterOptions {
    ResamplingScheme scheme = ResamplingScheme::systematic;
    /// Resample when ESS < resample_threshold * N.
    double resample_threshold = 0.5;
    /// Sort the cloud by state before resampling so that ancestor choices
    /// move continuously with the weights (scalar states only).
    bool order_by_state = true;
};

/// Effective sample size 1 / sum w_i^2 of normalized weights.
inline double ess(std::span<const double> weights) {
    double s = 0.0;
    for (double w : weights) s += w * w;
    return 1.0 / s;
}

inline double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// Systematic resampling with stratified points (u + k) / N, u in (0, 1).
inline std::vector<std::size_t> systematic_resample(std::span<const double> weights, double u) {
    const std::size_t n = weights.size();
    std::vector<std::size_t> out(n);
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double cdf = weights[0] / total;
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double point = (u + static_cast<double>(k)) / static_cast<double>(n);
        while (point > cdf && j + 1 < n) {
            ++j;
            cdf += weights[j] / total;
        }
        out[k] = j;
    }
    return out;
}

/// Multinomial resampling by inversion of one uniform per offspring.
inline std::vector<std::size_t> multinomial_resample(std::span<const double> weights,
                                                     std::span<const double> uniforms) {
    const std::size_t n = weights.size();
    std::vector<double> cdf(n);
    std::partial_sum(weights.begin(), weights.end(), cdf.begin());
    const double total = cdf.back();
    std::vector<std::size_t> out(uniforms.size());
    for (std::size_t k = 0; k < uniforms.size(); ++k) {
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), uniforms[k] * total);
        out[k] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), n - 1);
        // Skip zero-weight cells that share a CDF value with their successor.
        while (weights[out[k]] <= 0.0 && out[k] + 1 < n) ++out[k];
    }
    return out;
}

/// Uniforms consumed by one call of resample().
inline std::size_t resampling_draws(ResamplingScheme scheme, std::size_t n) {
    return scheme == ResamplingScheme::systematic ? 1 : n;
}

inline std::vector<std::size_t> resample_with(std::span<const double> weights, ResamplingScheme scheme,
                                              std::span<const double> uniforms) {
    return scheme == ResamplingScheme::systematic ? systematic_resample(weights, uniforms[0])
                                                  : multinomial_resample(weights, uniforms);
}

/// Ancestor indices for `weights`, consuming resampling_draws() uniforms.
inline std::vector<std::size_t> resample(std::span<const double> weights, ResamplingScheme scheme,
                                         SplitMix64& rng) {
    std::vector<double> u(resampling_draws(scheme, weights.size()));
    for (auto& x : u) x = rng.uniform();
    return resample_with(weights, scheme, u);
}

template <std::size_t D>
struct ParticleState {
    using Vector = std::array<double, D>;

    std::vector<double> particles;
    std::vector<double> log_weights;  // unnormalized
    std::vector<double> weights;      // normalized
    std::vector<Vector> alphas;       // empty unless the score is tracked
    double loglik_accum = 0.0;
    std::size_t t = 0;
    std::size_t resample_count = 0;
    bool resampled = false;  // whether the last step resampled

    std::size_t size() const noexcept { return particles.size(); }
    bool has_alphas() const noexcept { return !alphas.empty(); }

    /// sum_i w^(i) alpha^(i)
    Vector score() const {
        Vector s{};
        for (std::size_t i = 0; i < alphas.size(); ++i)
            for (std::size_t k = 0; k < D; ++k) s[k] += weights[i] * alphas[i][k];
        return s;
    }
};

namespace detail {

// Normalizes log weights in place into `weights`; returns log sum of the
// unnormalized weights.
inline double normalize(std::span<double> log_weights, std::vector<double>& weights, std::size_t t) {
    for (auto& lw : log_weights)
        if (std::isnan(lw)) lw = -std::numeric_limits<double>::infinity();
    const double lse = log_sum_exp(log_weights);
    if (!std::isfinite(lse)) throw DegenerateFilterError(t, "all particle weights vanished");
    weights.resize(log_weights.size());
    for (std::size_t i = 0; i < log_weights.size(); ++i) weights[i] = std::exp(log_weights[i] - lse);
    return lse;
}

}  // namespace detail

/// Step 0: draw from the initial law and weight by g(y_0 | x_0).
template <class Model>
ParticleState<Model::dim> initialize_filter(const Theta<Model>& theta, double y0, std::size_t n,
                                            SplitMix64& rng, bool track_score) {
    if (n == 0) throw ParameterDomainError("particle filter needs N >= 1");
    const Model model(theta.natural());
    ParticleState<Model::dim> s;
    s.particles.resize(n);
    s.log_weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        s.particles[i] = model.sample_initial(rng.normal());
        s.log_weights[i] = model.log_g(y0, s.particles[i]);
    }
    s.loglik_accum = detail::normalize(s.log_weights, s.weights, 0) - std::log(static_cast<double>(n));
    if (track_score) {
        s.alphas.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto a = model.grad_log_initial(s.particles[i]);
            const auto b = model.grad_log_g(y0, s.particles[i]);
            for (std::size_t k = 0; k < Model::dim; ++k) s.alphas[i][k] = a[k] + b[k];
        }
    }
    return s;
}

/**
 * One bootstrap step: optional resampling (ESS below threshold), propagation
 * through the transition, weighting by g(y | x). The log-likelihood
 * increment is log sum_i wbar_i g(y | x_i), where wbar are the normalized
 * pre-weights (1/N after resampling). Score tags are left empty; see
 * score_step().
 */
template <class Model>
ParticleState<Model::dim> bootstrap_step(const ParticleState<Model::dim>& prev, double y,
                                         const Theta<Model>& theta, SplitMix64& rng,
                                         const FilterOptions& opt = {}) {
    const std::size_t n = prev.size();
    const Model model(theta.natural());

    std::vector<double> u(resampling_draws(opt.scheme, n));
    for (auto& x : u) x = rng.uniform();

    ParticleState<Model::dim> next;
    next.t = prev.t + 1;
    next.resample_count = prev.resample_count;
    next.particles.resize(n);
    next.log_weights.resize(n);

    const double log_n = std::log(static_cast<double>(n));
    const double prev_lse = log_sum_exp(prev.log_weights);
    const bool do_resample = ess(prev.weights) < opt.resample_threshold * static_cast<double>(n);
    std::vector<std::size_t> ancestors(n);
    if (do_resample) {
        if (opt.order_by_state) {
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return prev.particles[a] < prev.particles[b];
            });
            std::vector<double> sorted(n);
            for (std::size_t k = 0; k < n; ++k) sorted[k] = prev.weights[order[k]];
            const auto pos = resample_with(sorted, opt.scheme, u);
            for (std::size_t k = 0; k < n; ++k) ancestors[k] = order[pos[k]];
        } else {
            ancestors = resample_with(prev.weights, opt.scheme, u);
        }
        ++next.resample_count;
    } else {
        std::iota(ancestors.begin(), ancestors.end(), std::size_t{0});
    }
    next.resampled = do_resample;

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = ancestors[i];
        next.particles[i] = model.sample_transition(prev.particles[a], rng.normal());
        const double pre = do_resample ? -log_n : prev.log_weights[a] - prev_lse;
        next.log_weights[i] = pre + model.log_g(y, next.particles[i]);
    }
    next.loglik_accum = prev.loglik_accum + detail::normalize(next.log_weights, next.weights, next.t);
    return next;
}

/**
 * Score tags at the new particles from the previous weighted cloud and its
 * tags. O(N^2); mixture weights are formed in log space with max
 * subtraction.
 */
template <class Model>
std::vector<std::array<double, Model::dim>> score_step(const ParticleState<Model::dim>& prev,
                                                       std::span<const double> new_particles, double y,
                                                       const Theta<Model>& theta,
                                                       std::size_t t = 0) {
    constexpr std::size_t D = Model::dim;
    const std::size_t m = prev.size();
    if (!prev.has_alphas()) throw std::logic_error("score_step: previous state carries no score tags");
    const Model model(theta.natural());

    const double prev_lse = log_sum_exp(prev.log_weights);
    std::vector<double> lw(m);
    for (std::size_t j = 0; j < m; ++j) lw[j] = prev.log_weights[j] - prev_lse;

    std::vector<std::array<double, D>> out(new_particles.size());
    std::vector<double> a(m);
    if constexpr (requires { model.ar1(); }) {
        // AR(1) kernel: the constant normalizer cancels in the mixture and the
        // kernel gradient is linear in (r x_prev, r^2), so only these moments
        // are accumulated.
        const auto& k = model.ar1();
        static_assert(sizeof(std::array<double, D>) == D * sizeof(double));
        const auto mi = static_cast<Eigen::Index>(m);
        const Eigen::Map<const Eigen::ArrayXd> xp(prev.particles.data(), mi);
        const Eigen::Map<const Eigen::ArrayXd> lwv(lw.data(), mi);
        const Eigen::Map<const Eigen::Matrix<double, static_cast<int>(D), Eigen::Dynamic>> alpha(
            prev.alphas.front().data(), static_cast<Eigen::Index>(D), mi);
        Eigen::ArrayXd r(mi), e(mi);
        for (std::size_t i = 0; i < new_particles.size(); ++i) {
            const double xi = new_particles[i];
            r = xi - k.phi * xp;
            e = lwv - (0.5 * k.inv_var) * r.square();
            const double mx = e.maxCoeff();
            if (!std::isfinite(mx)) throw DegenerateFilterError(t, "score mixture weights vanished");
            e = (e - mx).exp();
            const double total = e.sum();
            const double s_rx = (e * r * xp).sum();
            const double s_rr = (e * r.square()).sum();
            const Eigen::Matrix<double, static_cast<int>(D), 1> acc = alpha * e.matrix();
            const auto gg = model.grad_log_g(y, xi);
            for (std::size_t c = 0; c < D; ++c) out[i][c] = gg[c] + acc[static_cast<Eigen::Index>(c)] / total;
            out[i][0] += s_rx * k.inv_var / total;
            out[i][1] += (s_rr * k.inv_var / total - 1.0) / k.sigma;
        }
        return out;
    }
    for (std::size_t i = 0; i < new_particles.size(); ++i) {
        const double xi = new_particles[i];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            a[j] = lw[j] + model.log_q(prev.particles[j], xi);
            if (a[j] > mx) mx = a[j];
        }
        if (!std::isfinite(mx)) throw DegenerateFilterError(t, "score mixture weights vanished");
        double total = 0.0;
        std::array<double, D> acc{};
        for (std::size_t j = 0; j < m; ++j) {
            const double e = std::exp(a[j] - mx);
            if (e == 0.0) continue;
            total += e;
            const auto gq = model.grad_log_q(prev.particles[j], xi);
            for (std::size_t k = 0; k < D; ++k) acc[k] += e * (gq[k] + prev.alphas[j][k]);
        }
        const auto gg = model.grad_log_g(y, xi);
        for (std::size_t k = 0; k < D; ++k) out[i][k] = gg[k] + acc[k] / total;
    }
    return out;
}

template <std::size_t D>
struct FilterOutput {
    double loglik = 0.0;
    std::optional<std::array<double, D>> score;
    std::vector<double> ess_trace;
    std::size_t resample_count = 0;
    std::uint64_t seed = 0;
};

/// Assimilates y_t into `state` (t >= 1), including score tags when present.
template <class Model>
ParticleState<Model::dim> filter_advance(const ParticleState<Model::dim>& state, double y,
                                         const Theta<Model>& theta, SplitMix64& rng,
                                         const FilterOptions& opt = {}) {
    auto next = bootstrap_step(state, y, theta, rng, opt);
    if (state.has_alphas()) next.alphas = score_step(state, next.particles, y, theta, next.t);
    return next;
}

template <class Model>
FilterOutput<Model::dim> run_filter(const Theta<Model>& theta, std::span<const double> observations,
                                    std::size_t n_particles, std::uint64_t seed, bool track_score,
                                    const FilterOptions& opt = {}) {
    if (observations.empty()) throw ParameterDomainError("run_filter: no observations");
    SplitMix64 rng(seed);
    FilterOutput<Model::dim> out;
    out.seed = seed;
    out.ess_trace.reserve(observations.size());
    auto state = initialize_filter(theta, observations[0], n_particles, rng, track_score);
    out.ess_trace.push_back(ess(state.weights));
    for (std::size_t t = 1; t < observations.size(); ++t) {
        state = filter_advance(state, observations[t], theta, rng, opt);
        out.ess_trace.push_back(ess(state.weights));
    }
    out.loglik = state.loglik_accum;
    if (track_score) out.score = state.score();
    out.resample_count = state.resample_count;
    return out;
}

}  // namespace hmmic

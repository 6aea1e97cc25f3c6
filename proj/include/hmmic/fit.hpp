#pragma once

/** @file
 * Online gradient-ascent maximum likelihood driven by the particle score.
 *
 * At observation k the filter assimilates y_k at the current iterate
 * theta_k. The incremental score grad log p(y_k | y_{0:k-1}) is taken as the
 * change of the running score estimate sum_i w_k^(i) alpha_k^(i) across the
 * step; the tags alpha_{k-1} were computed at earlier iterates. The update
 *
 *   v_{k+1} = v_k + gamma_{k+1} * clip(J(v_k)^T * increment)
 *
 * happens in unconstrained coordinates v, J being the transform Jacobian.
 */

#include "csv.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "smc.hpp"
#include "theta.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace hmmic {

/// gamma_k = c * k^(-a); a in (0.5, 1] makes sum gamma = inf, sum gamma^2 < inf.
class StepSchedule {
public:
    explicit StepSchedule(double c = 1.0, double a = 2.0 / 3.0) : c_(c), a_(a) {
        if (!(a > 0.5 && a <= 1.0)) throw ParameterDomainError("step-size exponent must lie in (0.5, 1]");
        if (!(c > 0.0) || !std::isfinite(c)) throw ParameterDomainError("step-size scale must be positive");
    }

    double scale() const noexcept { return c_; }
    double exponent() const noexcept { return a_; }

    double operator()(std::uint64_t k) const {
        if (k < 1) throw std::invalid_argument("step index starts at 1");
        return c_ * std::pow(static_cast<double>(k), -a_);
    }

private:
    double c_;
    double a_;
};

inline double step_size(const StepSchedule& schedule, std::uint64_t k) { return schedule(k); }

struct OnlineFitOptions {
    std::size_t n_particles = 200;
    StepSchedule schedule{};
    /// Steps k <= burn_in use gamma_k * burn_in_scale.
    std::size_t burn_in = 100;
    double burn_in_scale = 0.1;
    /// Euclidean norm bound on the unconstrained ascent direction.
    double clip_norm = 10.0;
    /// Hold theta fixed (gamma = 0); the filter still advances.
    bool frozen = false;
    FilterOptions filter{};
};

template <class Model>
struct TracePoint {
    std::size_t k;
    typename Model::Params theta;
};

template <class Model>
struct OnlineFitState {
    using Vector = std::array<double, Model::dim>;

    Theta<Model> theta;
    ParticleState<Model::dim> particles;
    Vector previous_score{};
    Vector increment_sum{};  // telescoped incremental scores, natural coordinates
    std::size_t k = 0;       // observations assimilated
    std::vector<TracePoint<Model>> trace;

    explicit OnlineFitState(const Theta<Model>& init) : theta(init) {}
};

/// Assimilates one observation and updates the iterate.
template <class Model>
void online_gradient_step(OnlineFitState<Model>& state, double y, SplitMix64& rng,
                          const OnlineFitOptions& opt) {
    constexpr std::size_t D = Model::dim;
    if (state.k == 0) {
        state.particles = initialize_filter(state.theta, y, opt.n_particles, rng, true);
    } else {
        state.particles = filter_advance(state.particles, y, state.theta, rng, opt.filter);
    }
    const auto score = state.particles.score();
    std::array<double, D> inc{};
    for (std::size_t j = 0; j < D; ++j) {
        inc[j] = score[j] - state.previous_score[j];
        state.increment_sum[j] += inc[j];
    }
    state.previous_score = score;
    ++state.k;

    if (!opt.frozen) {
        auto dir = state.theta.to_unconstrained_gradient(inc);
        double norm2 = 0.0;
        bool finite = true;
        for (double g : dir) {
            finite = finite && std::isfinite(g);
            norm2 += g * g;
        }
        if (finite) {
            const double norm = std::sqrt(norm2);
            const double shrink = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;
            double gamma = opt.schedule(state.k);
            if (state.k <= opt.burn_in) gamma *= opt.burn_in_scale;
            auto v = state.theta.unconstrained();
            for (std::size_t j = 0; j < D; ++j) v[j] += gamma * shrink * dir[j];
            state.theta = Theta<Model>::from_unconstrained(clamp_unconstrained<Model>(v));
        }
    }
    state.trace.push_back({state.k, state.theta.natural()});
}

/// Trace CSV: header `k,<param names>`; flushed every 1000 rows.
template <class Model>
class TraceWriter {
public:
    explicit TraceWriter(std::ostream& os) : os_(os) {
        os_ << 'k';
        for (auto name : Model::param_names) os_ << ',' << name;
        os_ << '\n';
    }

    void write(const TracePoint<Model>& p) {
        os_ << p.k;
        for (double v : p.theta) os_ << ',' << format_double(v);
        os_ << '\n';
        if (++rows_ % 1000 == 0) os_.flush();
    }

    ~TraceWriter() { os_.flush(); }

private:
    std::ostream& os_;
    std::size_t rows_ = 0;
};

template <class Model>
struct CheckpointFit {
    std::size_t n;
    Theta<Model> theta_hat;
    double loglik_hat;
};

template <class Model>
struct FitReport {
    Theta<Model> theta_hat;
    double loglik_hat;
    std::size_t n_particles;
    std::size_t n;
    std::uint64_t seed;
    std::uint64_t loglik_seed;
    std::vector<TracePoint<Model>> trace;
    /// Fits on prefixes; equal to separate fits on each prefix with the same seed.
    std::vector<CheckpointFit<Model>> checkpoints;
};

/**
 * Runs the online recursion over `observations` and evaluates the particle
 * log-likelihood at the final iterate with a fresh filter seed.
 *
 * The pass is causal, so the iterate after m observations is what a fit on
 * y_{0:m-1} alone would return; `checkpoints` exploits this to report
 * prefix fits from one pass.
 */
template <class Model>
FitReport<Model> fit_online(std::span<const double> observations, const Theta<Model>& init,
                            const OnlineFitOptions& opt, std::uint64_t seed,
                            std::span<const std::size_t> checkpoints = {},
                            TraceWriter<Model>* trace_writer = nullptr) {
    if (observations.size() < 2) throw ParameterDomainError("fit_online: need at least 2 observations");
    SplitMix64 rng(derive_seed(seed, 0));
    const std::uint64_t loglik_seed = derive_seed(seed, 1);

    OnlineFitState<Model> state(init);
    std::vector<CheckpointFit<Model>> fits;
    std::size_t next_cp = 0;
    auto evaluate = [&](std::size_t m) {
        const auto out = run_filter(state.theta, observations.first(m), opt.n_particles, loglik_seed,
                                    false, opt.filter);
        return CheckpointFit<Model>{m, state.theta, out.loglik};
    };
    for (std::size_t t = 0; t < observations.size(); ++t) {
        online_gradient_step(state, observations[t], rng, opt);
        if (trace_writer) trace_writer->write(state.trace.back());
        while (next_cp < checkpoints.size() && checkpoints[next_cp] == state.k) {
            fits.push_back(evaluate(state.k));
            ++next_cp;
        }
    }
    if (next_cp < checkpoints.size())
        throw ParameterDomainError("fit_online: checkpoint beyond data length or unsorted");

    const auto final_fit = evaluate(observations.size());
    return {state.theta,       final_fit.loglik_hat, opt.n_particles,         observations.size(),
            seed,              loglik_seed,          std::move(state.trace), std::move(fits)};
}

}  // namespace hmmic

#pragma once

/** @file
 * Exact filtering for the scalar linear-Gaussian model: log-likelihood,
 * its gradient through tangent (sensitivity) recursions, and a
 * quasi-Newton maximum-likelihood fit. Serves as the oracle for the
 * particle approximations.
 */

#include "errors.hpp"
#include "models.hpp"
#include "theta.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

namespace hmmic {

struct KalmanState {
    static constexpr std::size_t dim = LinearGaussian::dim;
    using Vector = std::array<double, dim>;

    double mean = 0.0;      // predictive mean of x_t given y_{0:t-1}
    double variance = 0.0;  // predictive variance
    double loglik_accum = 0.0;
    Vector dmean{};
    Vector dvariance{};
    Vector dloglik{};
};

struct KalmanResult {
    double loglik;
    std::array<double, LinearGaussian::dim> score;
};

/// Stationary initial predictive state (mean 0, variance sigma_x^2/(1-phi^2)).
inline KalmanState kalman_initial_state(const Theta<LinearGaussian>& theta) {
    const double phi = theta[0], sx = theta[1];
    const double one_m = 1.0 - phi * phi;
    KalmanState s;
    s.variance = sx * sx / one_m;
    s.dvariance = {2.0 * phi * sx * sx / (one_m * one_m), 2.0 * sx / one_m, 0.0};
    return s;
}

/// Assimilates y and predicts one step ahead, carrying derivatives.
inline void kalman_update(KalmanState& s, const Theta<LinearGaussian>& theta, double y) {
    constexpr std::size_t d = KalmanState::dim;
    const double phi = theta[0], sx = theta[1], sv = theta[2];

    const double S = s.variance + sv * sv;
    const double e = y - s.mean;
    s.loglik_accum += -log_sqrt_2pi - 0.5 * std::log(S) - 0.5 * e * e / S;

    KalmanState::Vector dS{}, de{};
    for (std::size_t k = 0; k < d; ++k) {
        dS[k] = s.dvariance[k] + (k == 2 ? 2.0 * sv : 0.0);
        de[k] = -s.dmean[k];
        s.dloglik[k] += -0.5 * (dS[k] / S - e * e * dS[k] / (S * S) + 2.0 * e * de[k] / S);
    }

    const double K = s.variance / S;
    const double mf = s.mean + K * e;
    const double Pf = s.variance * sv * sv / S;
    KalmanState::Vector dmf{}, dPf{};
    for (std::size_t k = 0; k < d; ++k) {
        const double dK = (s.dvariance[k] * S - s.variance * dS[k]) / (S * S);
        dmf[k] = s.dmean[k] + dK * e + K * de[k];
        dPf[k] = s.dvariance[k] - (2.0 * s.variance * s.dvariance[k] * S -
                                   s.variance * s.variance * dS[k]) / (S * S);
    }

    s.mean = phi * mf;
    s.variance = phi * phi * Pf + sx * sx;
    for (std::size_t k = 0; k < d; ++k) {
        s.dmean[k] = phi * dmf[k] + (k == 0 ? mf : 0.0);
        s.dvariance[k] = phi * phi * dPf[k] + (k == 0 ? 2.0 * phi * Pf : 0.0) +
                         (k == 1 ? 2.0 * sx : 0.0);
    }
}

inline KalmanResult kalman_filter(const Theta<LinearGaussian>& theta,
                                  std::span<const double> observations) {
    KalmanState s = kalman_initial_state(theta);
    for (double y : observations) kalman_update(s, theta, y);
    return {s.loglik_accum, s.dloglik};
}

inline double kalman_loglik(const Theta<LinearGaussian>& theta, std::span<const double> observations) {
    return kalman_filter(theta, observations).loglik;
}

inline std::array<double, 3> kalman_score(const Theta<LinearGaussian>& theta,
                                          std::span<const double> observations) {
    return kalman_filter(theta, observations).score;
}

struct KalmanFit {
    Theta<LinearGaussian> theta_hat;
    double loglik_at_mle;
    double score_norm;  // over free coordinates, natural parameterization
    int iterations;
    bool converged;
};

struct KalmanMleOptions {
    double gradient_tolerance = 1e-8;
    int max_iterations = 500;
    /// Parameters held at their initial value when false.
    std::array<bool, 3> free{true, true, true};
};

/**
 * Maximizes kalman_loglik over the unconstrained coordinates of the free
 * parameters. Ascent direction is the gradient preconditioned by a BFGS
 * inverse-curvature estimate; step lengths come from Armijo backtracking.
 * Returns the best point visited; `converged` is false when the score
 * tolerance was not met.
 */
inline KalmanFit kalman_mle(std::span<const double> observations, const Theta<LinearGaussian>& init,
                            const KalmanMleOptions& opt = {}) {
    constexpr std::size_t d = 3;
    using Vec = std::array<double, d>;
    if (observations.size() < 3) throw ParameterDomainError("kalman_mle: need at least 3 observations");

    struct Point {
        Vec v;
        double f;
        Vec g;       // gradient w.r.t. unconstrained coordinates (free only)
        double snorm;
    };
    auto evaluate = [&](const Vec& v) {
        const auto theta = Theta<LinearGaussian>::from_unconstrained(clamp_unconstrained<LinearGaussian>(v));
        const auto r = kalman_filter(theta, observations);
        Point p{theta.unconstrained(), r.loglik, theta.to_unconstrained_gradient(r.score), 0.0};
        double ss = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            if (!opt.free[k]) {
                p.g[k] = 0.0;
            } else {
                ss += r.score[k] * r.score[k];
            }
        }
        p.snorm = std::sqrt(ss);
        return p;
    };
    auto dot = [](const Vec& a, const Vec& b) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
        return s;
    };

    Point cur = evaluate(init.unconstrained());
    Point best = cur;
    std::array<Vec, d> H{};  // inverse curvature of -loglik
    for (std::size_t k = 0; k < d; ++k) H[k][k] = opt.free[k] ? 1.0 : 0.0;
    bool scaled = false;

    int it = 0;
    for (; it < opt.max_iterations && cur.snorm >= opt.gradient_tolerance; ++it) {
        Vec dir{};
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) dir[a] += H[a][b] * cur.g[b];
        double slope = dot(cur.g, dir);
        if (!(slope > 0.0)) {
            dir = cur.g;
            slope = dot(cur.g, dir);
            for (std::size_t k = 0; k < d; ++k)
                for (std::size_t b = 0; b < d; ++b) H[k][b] = (k == b && opt.free[k]) ? 1.0 : 0.0;
            scaled = false;
        }
        if (!scaled) {
            // Keep the first trial step short in unconstrained units.
            const double norm = std::sqrt(dot(dir, dir));
            if (norm > 0.5) {
                for (auto& x : dir) x *= 0.5 / norm;
                slope *= 0.5 / norm;
            }
        }

        double step = 1.0;
        Point next = cur;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            Vec v = cur.v;
            for (std::size_t k = 0; k < d; ++k) v[k] += step * dir[k];
            next = evaluate(v);
            const double rounding = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(cur.f);
            if (next.f >= cur.f + 1e-4 * step * slope ||
                (std::abs(next.f - cur.f) <= rounding && next.snorm < cur.snorm)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        Vec s{}, y{};
        for (std::size_t k = 0; k < d; ++k) {
            s[k] = next.v[k] - cur.v[k];
            y[k] = -(next.g[k] - cur.g[k]);
        }
        const double sy = dot(s, y);
        if (sy > 1e-300) {
            if (!scaled) {
                const double gamma = sy / dot(y, y);
                for (std::size_t k = 0; k < d; ++k) H[k][k] = opt.free[k] ? gamma : 0.0;
                scaled = true;
            }
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            const double rho = 1.0 / sy;
            Vec Hy{};
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b) Hy[a] += H[a][b] * y[b];
            const double yHy = dot(y, Hy);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b)
                    H[a][b] += -rho * (s[a] * Hy[b] + Hy[a] * s[b]) +
                               (rho * rho * yHy + rho) * s[a] * s[b];
        }
        cur = next;
        const double tie = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(best.f);
        if (cur.f > best.f + tie || (std::abs(cur.f - best.f) <= tie && cur.snorm < best.snorm))
            best = cur;
    }

    return {Theta<LinearGaussian>::from_unconstrained(best.v), best.f, best.snorm, it,
            best.snorm < opt.gradient_tolerance};
}

}  // namespace hmmic

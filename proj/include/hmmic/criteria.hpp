#pragma once

/** @file
 * Information criteria and model selection.
 *
 *   AIC  = -2 l + 2 d
 *   BIC  = -2 l + d log n
 *   IC   = -l + pen(k, n)       (generalized penalty; note -l, not -2 l)
 *   log evidence ~ l + (d/2) log(2 pi) - (d/2) log n - (1/2) log det J + log prior(theta)
 *
 * with J the observed information per observation at the fitted value.
 */

#include "csv.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "smc.hpp"
#include "theta.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hmmic {

inline double aic(double loglik_hat, std::size_t d) {
    return -2.0 * loglik_hat + 2.0 * static_cast<double>(d);
}

inline double bic(double loglik_hat, std::size_t d, double n) {
    if (!(n >= 1.0)) throw ParameterDomainError("bic: n must be >= 1");
    return -2.0 * loglik_hat + static_cast<double>(d) * std::log(n);
}

/// pen(k, n) over a ladder of nested models indexed by k.
struct PenaltyFn {
    std::function<double(std::size_t, double)> fn;
    std::string name;

    double operator()(std::size_t k, double n) const { return fn(k, n); }
};

/// pen(k, n) = d_k
inline PenaltyFn aic_penalty(std::vector<std::size_t> dims) {
    return {[dims](std::size_t k, double) { return static_cast<double>(dims.at(k)); }, "aic"};
}

/// pen(k, n) = (d_k / 2) log n
inline PenaltyFn bic_penalty(std::vector<std::size_t> dims) {
    return {[dims](std::size_t k, double n) { return 0.5 * static_cast<double>(dims.at(k)) * std::log(n); },
            "bic"};
}

/// pen(k, n) = c * d_k * log log n
inline PenaltyFn loglog_penalty(std::vector<std::size_t> dims, double c = 0.5) {
    return {[dims, c](std::size_t k, double n) {
                return c * static_cast<double>(dims.at(k)) * std::log(std::log(n));
            },
            "loglog"};
}

inline double generalized_ic(double loglik_hat, const PenaltyFn& pen, std::size_t k, double n) {
    return -loglik_hat + pen(k, n);
}

enum class Consistency { strong, weak, inconsistent };

inline std::string to_string(Consistency c) {
    switch (c) {
        case Consistency::strong: return "strong";
        case Consistency::weak: return "weak";
        case Consistency::inconsistent: return "inconsistent";
    }
    return "?";
}

/**
 * Thresholds standing in for the limits in the penalty-growth conditions.
 * Let delta(n) = pen(k', n) - pen(k, n) and LL(n) = log log n on the grid.
 *
 *  - delta / n must be nonincreasing and below `max_slope` at the grid end,
 *    otherwise the penalty is too heavy and we report inconsistent;
 *  - strong:  delta / LL nondecreasing with end/start ratio > growth_ratio;
 *  - weak:    delta itself grows with end/start ratio > growth_ratio;
 *  - inconsistent otherwise (bounded penalty gap).
 */
struct ClassifyOptions {
    std::vector<double> n_grid{1e3, 1e4, 1e6, 1e8};
    double growth_ratio = 1.1;
    double max_slope = 1e-3;
};

inline Consistency classify_penalty(const PenaltyFn& pen, std::size_t k, std::size_t k_prime,
                                    const ClassifyOptions& opt = {}) {
    const auto& grid = opt.n_grid;
    if (k_prime <= k) throw ClassificationError("classify_penalty: need k' > k");
    if (grid.size() < 4) throw ClassificationError("classify_penalty: grid needs at least 4 points");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw ClassificationError("classify_penalty: grid must increase");
    if (!(grid.front() > std::numbers::e)) throw ClassificationError("classify_penalty: grid must exceed e");

    std::vector<double> delta(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) delta[i] = pen(k_prime, grid[i]) - pen(k, grid[i]);
    for (std::size_t i = 1; i < delta.size(); ++i) {
        if (delta[i] < delta[i - 1] * (1.0 - 1e-12) - 1e-12)
            throw ClassificationError("classify_penalty: penalty gap decreases on the grid");
    }
    if (!(delta.front() > 0.0)) return Consistency::inconsistent;

    for (std::size_t i = 1; i < delta.size(); ++i)
        if (delta[i] / grid[i] > delta[i - 1] / grid[i - 1]) return Consistency::inconsistent;
    if (delta.back() / grid.back() > opt.max_slope) return Consistency::inconsistent;

    auto ll_ratio = [&](std::size_t i) { return delta[i] / std::log(std::log(grid[i])); };
    bool ll_monotone = true;
    for (std::size_t i = 1; i < delta.size(); ++i) ll_monotone = ll_monotone && ll_ratio(i) >= ll_ratio(i - 1);
    if (ll_monotone && ll_ratio(delta.size() - 1) > opt.growth_ratio * ll_ratio(0)) return Consistency::strong;
    if (delta.back() > opt.growth_ratio * delta.front()) return Consistency::weak;
    return Consistency::inconsistent;
}

struct IcResult {
    std::string model;
    std::size_t d = 0;
    std::size_t n = 0;
    double loglik_hat = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    std::optional<double> generalized_ic;
    std::optional<double> log_evidence;
};

inline IcResult make_ic_result(std::string model, std::size_t d, std::size_t n, double loglik_hat) {
    IcResult r;
    r.model = std::move(model);
    r.d = d;
    r.n = n;
    r.loglik_hat = loglik_hat;
    r.aic = aic(loglik_hat, d);
    r.bic = bic(loglik_hat, d, static_cast<double>(n));
    return r;
}

/// `model,d,n,loglik,aic,bic,log_evidence` (NA when no evidence).
inline std::string ic_csv_header() { return "model,d,n,loglik,aic,bic,log_evidence"; }

inline std::string ic_csv_row(const IcResult& r) {
    return r.model + ',' + std::to_string(r.d) + ',' + std::to_string(r.n) + ',' +
           format_double(r.loglik_hat) + ',' + format_double(r.aic) + ',' + format_double(r.bic) + ',' +
           (r.log_evidence ? format_double(*r.log_evidence) : std::string("NA"));
}

enum class Criterion { aic, bic, generalized, evidence };

/// argmin of AIC/BIC/generalized IC, argmax of evidence; ties go to the smaller d.
inline std::size_t select(std::span<const IcResult> results, Criterion criterion) {
    if (results.empty()) throw std::invalid_argument("select: empty result list");
    auto score = [&](const IcResult& r) -> double {
        switch (criterion) {
            case Criterion::aic: return r.aic;
            case Criterion::bic: return r.bic;
            case Criterion::generalized:
                if (!r.generalized_ic) throw std::invalid_argument("select: generalized IC missing for " + r.model);
                return *r.generalized_ic;
            case Criterion::evidence:
                if (!r.log_evidence) throw std::invalid_argument("select: evidence missing for " + r.model);
                return -*r.log_evidence;
        }
        return 0.0;
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i) {
        const double a = score(results[i]), b = score(results[best]);
        if (a < b || (a == b && results[i].d < results[best].d)) best = i;
    }
    return best;
}

struct ComparisonResult {
    std::vector<IcResult> results;
    double lambda_n = 0.0;  // loglik(big) - loglik(small)
    std::size_t selected_by_aic = 0;
    std::size_t selected_by_bic = 0;
    std::optional<std::size_t> selected_by_evidence;
};

inline ComparisonResult compare(std::vector<IcResult> results, std::size_t small, std::size_t big) {
    ComparisonResult c;
    c.lambda_n = results.at(big).loglik_hat - results.at(small).loglik_hat;
    c.selected_by_aic = select(results, Criterion::aic);
    c.selected_by_bic = select(results, Criterion::bic);
    bool all_evidence = true;
    for (const auto& r : results) all_evidence = all_evidence && r.log_evidence.has_value();
    if (all_evidence) c.selected_by_evidence = select(results, Criterion::evidence);
    c.results = std::move(results);
    return c;
}

// --- Laplace approximation -------------------------------------------------

inline double laplace_log_evidence(double loglik_hat, std::size_t d, double n, double log_det_information,
                                   double log_prior) {
    const double half_d = 0.5 * static_cast<double>(d);
    return loglik_hat + half_d * std::log(2.0 * std::numbers::pi) - half_d * std::log(n) -
           0.5 * log_det_information + log_prior;
}

struct InformationEstimate {
    Eigen::MatrixXd information;  // per observation, unconstrained coordinates
    double log_det = 0.0;
    bool projected = false;
};

/// Symmetrizes and lifts eigenvalues below max(relative_floor * largest,
/// absolute_floor). Throws if no positive curvature remains.
inline InformationEstimate make_information(const Eigen::MatrixXd& raw, double relative_floor = 1e-8,
                                            double absolute_floor = 0.0) {
    const Eigen::MatrixXd sym = 0.5 * (raw + raw.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    Eigen::VectorXd lambda = eig.eigenvalues();
    const double top = lambda.maxCoeff();
    if (!(top > 0.0) || !std::isfinite(top))
        throw EvidenceUnavailableError("observed information has no positive eigenvalue");
    InformationEstimate out;
    const double floor = std::max(relative_floor * top, absolute_floor);
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda[i] < floor) {
            lambda[i] = floor;
            out.projected = true;
        }
    }
    out.information = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    out.log_det = lambda.array().log().sum();
    return out;
}

/// Independent N(0, 1) on each unconstrained coordinate.
template <std::size_t D>
double standard_normal_log_prior(const std::array<double, D>& v) {
    double s = 0.0;
    for (double x : v) s += -log_sqrt_2pi - 0.5 * x * x;
    return s;
}

struct LaplaceOptions {
    /// Central-difference step in unconstrained coordinates. Must be wide
    /// enough that curvature dominates the resampling jitter of the
    /// common-seed log-likelihood surface.
    double step = 0.1;
    std::size_t replicates = 5;  // common-seed filter runs averaged per point
    FilterOptions filter{};
};

/**
 * Observed information -H/n from central differences of the seed-averaged
 * particle log-likelihood. Every evaluation point reuses the same seeds.
 * Directions with less than one unit of total information (eigenvalue
 * below 1/n) are floored there and flagged as projected.
 */
template <class Model>
InformationEstimate particle_observed_information(const Theta<Model>& theta_hat,
                                                  std::span<const double> observations,
                                                  std::size_t n_particles, std::uint64_t seed,
                                                  const LaplaceOptions& opt = {}) {
    constexpr std::size_t D = Model::dim;
    const auto v0 = theta_hat.unconstrained();
    auto f = [&](const std::array<double, D>& v) {
        const auto theta = Theta<Model>::from_unconstrained(v);
        double s = 0.0;
        for (std::size_t r = 0; r < opt.replicates; ++r)
            s += run_filter(theta, observations, n_particles, derive_seed(seed, r), false, opt.filter).loglik;
        return s / static_cast<double>(opt.replicates);
    };
    auto shifted = [&](std::size_t i, double si, std::size_t j, double sj) {
        auto v = v0;
        v[i] += si * opt.step;
        v[j] += sj * opt.step;
        return f(v);
    };
    const double h2 = opt.step * opt.step;
    const double f0 = f(v0);
    Eigen::MatrixXd H(D, D);
    for (std::size_t i = 0; i < D; ++i) {
        auto vp = v0, vm = v0;
        vp[i] += opt.step;
        vm[i] -= opt.step;
        H(i, i) = (f(vp) - 2.0 * f0 + f(vm)) / h2;
        for (std::size_t j = 0; j < i; ++j) {
            H(i, j) = (shifted(i, 1, j, 1) - shifted(i, 1, j, -1) - shifted(i, -1, j, 1) +
                       shifted(i, -1, j, -1)) / (4.0 * h2);
            H(j, i) = H(i, j);
        }
    }
    const double n = static_cast<double>(observations.size());
    return make_information(-H / n, 1e-8, 1.0 / n);
}

struct LaplaceResult {
    double log_evidence;
    InformationEstimate information;
};

template <class Model>
using LogPrior = std::function<double(const std::array<double, Model::dim>&)>;

/// Laplace log-evidence with a prior density on unconstrained coordinates.
template <class Model>
LaplaceResult laplace_log_evidence(double loglik_hat, const Theta<Model>& theta_hat,
                                   std::span<const double> observations, const LogPrior<Model>& log_prior,
                                   std::size_t n_particles, std::uint64_t seed,
                                   const LaplaceOptions& opt = {}) {
    auto info = particle_observed_information(theta_hat, observations, n_particles, seed, opt);
    const double le = laplace_log_evidence(loglik_hat, Model::dim, static_cast<double>(observations.size()),
                                           info.log_det, log_prior(theta_hat.unconstrained()));
    return {le, std::move(info)};
}

}  // namespace hmmic

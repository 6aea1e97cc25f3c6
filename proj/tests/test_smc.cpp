#include "hmmic/kalman.hpp"
#include "hmmic/smc.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace hmmic;

namespace {

using LG = LinearGaussian;

// AR(1) state with observations that ignore the state: y ~ N(0, 1).
// Exercises the generic score path (no ar1() accessor).
class FlatObservation {
public:
    static constexpr std::size_t dim = 2;
    using Params = std::array<double, dim>;
    static constexpr std::string_view name = "flat";
    static constexpr std::array<std::string_view, dim> param_names{"phi", "sigma_x"};
    static constexpr std::array<ParamKind, dim> kinds{ParamKind::coefficient, ParamKind::scale};

    explicit FlatObservation(const Params& p) : p_(p) {}

    double log_q(double xp, double x) const {
        const double r = x - p_[0] * xp;
        return -log_sqrt_2pi - std::log(p_[1]) - 0.5 * r * r / (p_[1] * p_[1]);
    }
    Params grad_log_q(double xp, double x) const {
        const double r = x - p_[0] * xp, v = p_[1] * p_[1];
        return {r * xp / v, (r * r / v - 1.0) / p_[1]};
    }
    double log_g(double y, double) const { return log_normal_centered(y, 1.0); }
    Params grad_log_g(double, double) const { return {}; }
    double sample_initial(double z) const { return z; }
    Params grad_log_initial(double) const { return {}; }
    double sample_transition(double xp, double z) const { return p_[0] * xp + p_[1] * z; }

private:
    Params p_;
};

// Direct transcription of the score recursion in probability space.
template <class Model>
std::vector<std::array<double, Model::dim>> naive_score_step(const ParticleState<Model::dim>& prev,
                                                             const std::vector<double>& xs, double y,
                                                             const typename Model::Params& p) {
    const Model m(p);
    std::vector<std::array<double, Model::dim>> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double den = 0.0;
        std::array<double, Model::dim> num{};
        for (std::size_t j = 0; j < prev.size(); ++j) {
            const double wq = prev.weights[j] * std::exp(m.log_q(prev.particles[j], xs[i]));
            den += wq;
            const auto gq = m.grad_log_q(prev.particles[j], xs[i]);
            for (std::size_t k = 0; k < Model::dim; ++k) num[k] += wq * (gq[k] + prev.alphas[j][k]);
        }
        const auto gg = m.grad_log_g(y, xs[i]);
        for (std::size_t k = 0; k < Model::dim; ++k) out[i][k] = gg[k] + num[k] / den;
    }
    return out;
}

template <class Model>
ParticleState<Model::dim> advance_with_score(const Theta<Model>& theta, const std::vector<double>& y,
                                             std::size_t steps, std::size_t n, std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto s = initialize_filter(theta, y[0], n, rng, true);
    for (std::size_t t = 1; t <= steps; ++t) s = filter_advance(s, y[t], theta, rng);
    return s;
}

template <class Model>
void expect_matches_naive(const typename Model::Params& p, std::uint64_t seed) {
    const auto theta = Theta<Model>::from_natural(p);
    SplitMix64 rng(seed);
    std::vector<double> y(6);
    for (auto& v : y) v = rng.normal();
    const auto prev = advance_with_score(theta, y, 4, 60, seed);
    std::vector<double> xs(60);
    for (auto& v : xs) v = 1.5 * rng.normal();
    const auto fast = score_step(prev, xs, y[5], theta);
    const auto ref = naive_score_step<Model>(prev, xs, y[5], p);
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t k = 0; k < Model::dim; ++k)
            EXPECT_LE(std::abs(fast[i][k] - ref[i][k]), 1e-12 * std::max(1.0, std::abs(ref[i][k])));
}

double exact_flat_loglik(const std::vector<double>& y) {
    double s = 0.0;
    for (double v : y) s += log_normal_centered(v, 1.0);
    return s;
}

}  // namespace

TEST(Ess, Examples) {
    const std::vector<double> uniform(8, 0.125);
    EXPECT_DOUBLE_EQ(ess(uniform), 8.0);
    const std::vector<double> point{0.0, 1.0, 0.0};
    EXPECT_DOUBLE_EQ(ess(point), 1.0);
    const std::vector<double> half{0.5, 0.5};
    EXPECT_DOUBLE_EQ(ess(half), 2.0);
}

TEST(SystematicResample, UniformWeightsKeepEveryParticle) {
    const std::vector<double> w(10, 0.1);
    for (double u : {0.01, 0.3, 0.5, 0.99}) {
        const auto a = systematic_resample(w, u);
        for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a[i], i);
    }
}

TEST(SystematicResample, PointMassSelectsOnlyThatIndex) {
    const std::vector<double> w{0.0, 0.0, 1.0, 0.0};
    for (std::size_t a : systematic_resample(w, 0.77)) EXPECT_EQ(a, 2u);
}

TEST(SystematicResample, CountsAreFloorOrCeilingOfExpected) {
    const std::vector<double> w{0.75, 0.25, 0.0, 0.0};
    for (int g = 1; g < 100; ++g) {
        const auto a = systematic_resample(w, g / 100.0);
        EXPECT_EQ(std::count(a.begin(), a.end(), 0u), 3);
        EXPECT_EQ(std::count(a.begin(), a.end(), 1u), 1);
    }
    SplitMix64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(13);
        for (auto& x : v) x = rng.uniform();
        const double total = std::accumulate(v.begin(), v.end(), 0.0);
        const auto a = systematic_resample(v, rng.uniform());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double expected = 13.0 * v[i] / total;
            const auto c = static_cast<double>(std::count(a.begin(), a.end(), i));
            EXPECT_GE(c, std::floor(expected) - 1e-9);
            EXPECT_LE(c, std::ceil(expected) + 1e-9);
        }
    }
}

TEST(MultinomialResample, InvertsTheCdf) {
    const std::vector<double> w{0.2, 0.3, 0.5};
    const std::vector<double> u{0.1, 0.25, 0.49, 0.51, 0.95};
    const auto a = multinomial_resample(w, u);
    EXPECT_EQ(a, (std::vector<std::size_t>{0, 1, 1, 2, 2}));
}

TEST(Filter, ExactWhenObservationIgnoresState) {
    const auto theta = Theta<FlatObservation>::from_natural({0.8, 0.6});
    SplitMix64 rng(21);
    std::vector<double> y(150);
    for (auto& v : y) v = 2.0 * rng.normal();
    const double exact = exact_flat_loglik(y);
    for (std::size_t n : {1u, 7u, 100u}) {
        for (auto scheme : {ResamplingScheme::systematic, ResamplingScheme::multinomial}) {
            FilterOptions opt;
            opt.scheme = scheme;
            const auto out = run_filter(theta, std::span<const double>(y), n, 5, false, opt);
            EXPECT_NEAR(out.loglik, exact, 1e-10) << "N=" << n;
        }
    }
}

TEST(Filter, SingleParticleIncrementIsObservationDensity) {
    const auto theta = Theta<LG>::from_natural({0.7, 0.5, 0.8});
    const auto traj = simulate<LG>(theta.natural(), 10, 2);
    SplitMix64 rng(9);
    auto s = initialize_filter(theta, traj.observations[0], 1, rng, true);
    const LG m(theta.natural());
    EXPECT_NEAR(s.loglik_accum, m.log_g(traj.observations[0], s.particles[0]), 1e-14);
    for (std::size_t t = 1; t < 10; ++t) {
        const double before = s.loglik_accum;
        const auto prev = s;
        s = filter_advance(prev, traj.observations[t], theta, rng);
        EXPECT_NEAR(s.loglik_accum - before, m.log_g(traj.observations[t], s.particles[0]), 1e-12);
        // With one particle the tag is the complete-data gradient along its path.
        const auto gq = m.grad_log_q(prev.particles[0], s.particles[0]);
        const auto gg = m.grad_log_g(traj.observations[t], s.particles[0]);
        for (std::size_t k = 0; k < 3; ++k)
            EXPECT_NEAR(s.alphas[0][k], prev.alphas[0][k] + gq[k] + gg[k], 1e-10 * std::max(1.0, std::abs(s.alphas[0][k])));
    }
}

TEST(ScoreStep, MatchesNaiveReference) {
    expect_matches_naive<LG>({0.9, std::sqrt(0.3), 1.0}, 1);
    expect_matches_naive<LG>({-0.4, 1.2, 0.5}, 2);
    expect_matches_naive<StochasticVolatility>({0.9, 0.6}, 3);
    expect_matches_naive<StochasticVolatilityJumps>({0.8, 0.5, 1.1, 0.3}, 4);
    expect_matches_naive<FlatObservation>({0.5, 0.9}, 5);
}

TEST(ScoreStep, InvariantToParticleOrder) {
    const auto theta = Theta<StochasticVolatilityJumps>::from_natural({0.9, 0.5, 0.8, 0.4});
    const auto traj = simulate<StochasticVolatilityJumps>(theta.natural(), 6, 8);
    const auto prev = advance_with_score(theta, traj.observations, 4, 40, 8);
    std::vector<std::size_t> perm(prev.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::reverse(perm.begin(), perm.end());
    std::rotate(perm.begin(), perm.begin() + 7, perm.end());
    auto shuffled = prev;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled.particles[i] = prev.particles[perm[i]];
        shuffled.log_weights[i] = prev.log_weights[perm[i]];
        shuffled.weights[i] = prev.weights[perm[i]];
        shuffled.alphas[i] = prev.alphas[perm[i]];
    }
    const std::vector<double> xs{-1.0, -0.2, 0.0, 0.4, 1.3};
    const auto a = score_step(prev, xs, traj.observations[5], theta);
    const auto b = score_step(shuffled, xs, traj.observations[5], theta);
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a[i][k], b[i][k], 1e-12 * std::max(1.0, std::abs(a[i][k])));
}

TEST(ScoreStep, RequiresTags) {
    const auto theta = Theta<LG>::from_natural({0.5, 1.0, 1.0});
    SplitMix64 rng(1);
    const auto s = initialize_filter(theta, 0.3, 5, rng, false);
    const std::vector<double> xs{0.0};
    EXPECT_THROW(score_step(s, xs, 0.1, theta), std::logic_error);
}

TEST(Filter, WeightsStayNormalized) {
    const auto theta = Theta<StochasticVolatilityJumps>::from_natural({0.9, std::sqrt(0.3), std::sqrt(0.6), 0.6});
    const auto traj = simulate<StochasticVolatilityJumps>(theta.natural(), 300, 4);
    SplitMix64 rng(4);
    auto s = initialize_filter(theta, traj.observations[0], 64, rng, false);
    std::size_t resampled = 0;
    for (std::size_t t = 1; t < traj.size(); ++t) {
        s = bootstrap_step(s, traj.observations[t], theta, rng);
        resampled += s.resampled ? 1 : 0;
        const double total = std::accumulate(s.weights.begin(), s.weights.end(), 0.0);
        EXPECT_NEAR(total, 1.0, 1e-12);
        EXPECT_GE(ess(s.weights), 1.0 - 1e-12);
    }
    EXPECT_EQ(resampled, s.resample_count);
    EXPECT_GT(resampled, 0u);
}

TEST(Filter, ResamplingDecisionDoesNotShiftTheStream) {
    const auto theta = Theta<LG>::from_natural({0.9, 0.5, 1.0});
    SplitMix64 a(12), b(12);
    const auto s0 = initialize_filter(theta, 0.4, 20, a, false);
    b = a;
    FilterOptions never, always;
    never.resample_threshold = 0.0;
    always.resample_threshold = 2.0;
    const auto sn = bootstrap_step(s0, 1.1, theta, a, never);
    const auto sa = bootstrap_step(s0, 1.1, theta, b, always);
    EXPECT_FALSE(sn.resampled);
    EXPECT_TRUE(sa.resampled);
    EXPECT_EQ(a(), b());
}

TEST(Filter, BitReproducible) {
    const auto theta = Theta<StochasticVolatility>::from_natural({0.9, 0.5});
    const auto traj = simulate<StochasticVolatility>(theta.natural(), 200, 6);
    const auto a = run_filter(theta, std::span<const double>(traj.observations), 100, 77, true);
    const auto b = run_filter(theta, std::span<const double>(traj.observations), 100, 77, true);
    EXPECT_EQ(a.loglik, b.loglik);
    EXPECT_EQ(*a.score, *b.score);
    EXPECT_EQ(a.ess_trace, b.ess_trace);
    const auto c = run_filter(theta, std::span<const double>(traj.observations), 100, 78, true);
    EXPECT_NE(a.loglik, c.loglik);
}

TEST(Filter, DegenerateWeightsReportTheTimeIndex) {
    const auto theta = Theta<FlatObservation>::from_natural({0.5, 1.0});
    const std::vector<double> y{0.1, 0.2, std::nan(""), 0.3};
    try {
        run_filter(theta, std::span<const double>(y), 10, 1, false);
        FAIL() << "expected a degenerate filter";
    } catch (const DegenerateFilterError& e) {
        EXPECT_EQ(e.time_index(), 2u);
    }
}

TEST(Filter, RejectsEmptyInput) {
    const auto theta = Theta<LG>::from_natural({0.5, 1.0, 1.0});
    const std::vector<double> y;
    EXPECT_THROW(run_filter(theta, std::span<const double>(y), 10, 1, false), ParameterDomainError);
    const std::vector<double> y1{0.1};
    EXPECT_THROW(run_filter(theta, std::span<const double>(y1), 0, 1, false), ParameterDomainError);
}

TEST(Filter, LoglikAgreesWithKalman) {
    const auto theta = Theta<LG>::from_natural({0.9, std::sqrt(0.3), 1.0});
    const auto traj = simulate<LG>(theta.natural(), 200, 31);
    const double exact = kalman_loglik(theta, traj.observations);
    constexpr int seeds = 30;
    double m = 0.0, m2 = 0.0;
    for (int s = 0; s < seeds; ++s) {
        const double v = run_filter(theta, std::span<const double>(traj.observations), 500, 1000 + s, false).loglik;
        m += v;
        m2 += v * v;
    }
    m /= seeds;
    const double se = std::sqrt((m2 / seeds - m * m) * seeds / (seeds - 1) / seeds);
    EXPECT_LT(std::abs(m - exact), 3.0 * se + 1e-9) << "mean " << m << " exact " << exact << " se " << se;
}

TEST(Filter, ScoreAgreesWithKalman) {
    const auto theta = Theta<LG>::from_natural({0.9, std::sqrt(0.3), 1.0});
    const auto traj = simulate<LG>(theta.natural(), 100, 32);
    const auto exact = kalman_score(theta, traj.observations);
    constexpr int seeds = 20;
    std::array<double, 3> m{}, m2{};
    for (int s = 0; s < seeds; ++s) {
        const auto v = *run_filter(theta, std::span<const double>(traj.observations), 400, 2000 + s, true).score;
        for (std::size_t k = 0; k < 3; ++k) {
            m[k] += v[k];
            m2[k] += v[k] * v[k];
        }
    }
    for (std::size_t k = 0; k < 3; ++k) {
        const double mean = m[k] / seeds;
        const double se = std::sqrt((m2[k] / seeds - mean * mean) * seeds / (seeds - 1) / seeds);
        EXPECT_LT(std::abs(mean - exact[k]), 3.0 * se) << "component " << k;
    }
}

#include "hmmic/criteria.hpp"
#include "hmmic/kalman.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace hmmic;

namespace {

using LG = LinearGaussian;

IcResult with_loglik(std::string name, std::size_t d, std::size_t n, double ll) {
    return make_ic_result(std::move(name), d, n, ll);
}

// -H/n of the exact log-likelihood in unconstrained coordinates, by central
// differences of the exact unconstrained score.
Eigen::MatrixXd kalman_information(const Theta<LG>& theta, const std::vector<double>& y) {
    const auto v0 = theta.unconstrained();
    Eigen::MatrixXd H(3, 3);
    const double h = 1e-5;
    for (int j = 0; j < 3; ++j) {
        auto up = v0, dn = v0;
        up[j] += h;
        dn[j] -= h;
        const auto tu = Theta<LG>::from_unconstrained(up), td = Theta<LG>::from_unconstrained(dn);
        const auto su = tu.to_unconstrained_gradient(kalman_score(tu, y));
        const auto sd = td.to_unconstrained_gradient(kalman_score(td, y));
        for (int i = 0; i < 3; ++i) H(i, j) = (su[i] - sd[i]) / (2.0 * h);
    }
    return -0.5 * (H + H.transpose()) / static_cast<double>(y.size());
}

}  // namespace

TEST(Aic, Examples) {
    EXPECT_EQ(aic(-100.0, 2), 204.0);
    EXPECT_EQ(aic(0.0, 0), 0.0);
    EXPECT_EQ(aic(-100.0, 4) - aic(-100.0, 2), 4.0);
}

TEST(Bic, Examples) {
    EXPECT_NEAR(bic(-100.0, 2, std::exp(2.0)), 204.0, 1e-12);
    EXPECT_EQ(bic(0.0, 0, 1e6), 0.0);
    EXPECT_NEAR(bic(-50.0, 4, 1e4) - bic(-50.0, 2, 1e4), 18.420680743952367, 1e-12);
    EXPECT_THROW(bic(0.0, 1, 0.5), ParameterDomainError);
}

TEST(Bic, ClosedFormIsBitExact) {
    SplitMix64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const double ll = -1e4 * rng.uniform();
        const auto n = static_cast<std::size_t>(1 + 1e5 * rng.uniform());
        const auto r = make_ic_result("m", 3, n, ll);
        EXPECT_EQ(r.aic, -2.0 * ll + 6.0);
        EXPECT_EQ(r.bic, -2.0 * ll + 3.0 * std::log(static_cast<double>(n)));
    }
}

TEST(GeneralizedIc, Examples) {
    const std::vector<std::size_t> dims{2, 4};
    EXPECT_EQ(generalized_ic(-100.0, aic_penalty(dims), 0, 50.0), 102.0);
    EXPECT_NEAR(generalized_ic(-100.0, bic_penalty(dims), 0, std::exp(2.0)), 102.0, 1e-12);
    const PenaltyFn zero{[](std::size_t, double) { return 0.0; }, "zero"};
    EXPECT_EQ(generalized_ic(-37.5, zero, 1, 1e3), 37.5);
    // pen = (d/2) log n is exactly half of BIC.
    EXPECT_NEAR(2.0 * generalized_ic(-80.0, bic_penalty(dims), 1, 1234.0), bic(-80.0, 4, 1234.0), 1e-12);
}

TEST(ClassifyPenalty, KnownCriteria) {
    const std::vector<std::size_t> dims{2, 4};
    EXPECT_EQ(classify_penalty(bic_penalty(dims), 0, 1), Consistency::strong);
    EXPECT_EQ(classify_penalty(aic_penalty(dims), 0, 1), Consistency::inconsistent);
    EXPECT_EQ(classify_penalty(loglog_penalty(dims, 0.5), 0, 1), Consistency::weak);
}

TEST(ClassifyPenalty, LinearGrowthIsNotConsistent) {
    const PenaltyFn linear{[](std::size_t k, double n) { return 0.01 * static_cast<double>(k) * n; }, "linear"};
    EXPECT_EQ(classify_penalty(linear, 0, 1), Consistency::inconsistent);
    const PenaltyFn root{[](std::size_t k, double n) { return static_cast<double>(k) * std::sqrt(n); }, "sqrt"};
    EXPECT_EQ(classify_penalty(root, 0, 1), Consistency::strong);
}

TEST(ClassifyPenalty, Errors) {
    const std::vector<std::size_t> dims{2, 4};
    EXPECT_THROW(classify_penalty(bic_penalty(dims), 1, 1), ClassificationError);
    EXPECT_THROW(classify_penalty(bic_penalty(dims), 1, 0), ClassificationError);
    ClassifyOptions short_grid;
    short_grid.n_grid = {1e3, 1e4, 1e5};
    EXPECT_THROW(classify_penalty(bic_penalty(dims), 0, 1, short_grid), ClassificationError);
    const PenaltyFn shrinking{[](std::size_t k, double n) { return static_cast<double>(k) / std::log(n); }, "shrink"};
    EXPECT_THROW(classify_penalty(shrinking, 0, 1), ClassificationError);
}

TEST(Select, Examples) {
    const std::vector<IcResult> one{with_loglik("a", 2, 100, -10.0)};
    EXPECT_EQ(select(one, Criterion::bic), 0u);

    IcResult a = with_loglik("a", 2, 100, 0.0), b = with_loglik("b", 4, 100, 0.0);
    a.bic = 209.0;
    b.bic = 205.0;
    const std::vector<IcResult> two{a, b};
    EXPECT_EQ(select(two, Criterion::bic), 1u);

    const std::vector<IcResult> tie{with_loglik("big", 4, 100, -10.0), with_loglik("small", 2, 100, -12.0)};
    EXPECT_EQ(tie[0].aic, tie[1].aic);
    EXPECT_EQ(select(tie, Criterion::aic), 1u);

    EXPECT_THROW(select(std::vector<IcResult>{}, Criterion::aic), std::invalid_argument);
}

TEST(Select, EvidenceIsMaximized) {
    auto a = with_loglik("a", 2, 100, -10.0), b = with_loglik("b", 4, 100, -9.0);
    a.log_evidence = -20.0;
    b.log_evidence = -21.0;
    const std::vector<IcResult> v{a, b};
    EXPECT_EQ(select(v, Criterion::evidence), 0u);
    const auto c = compare(v, 0, 1);
    EXPECT_EQ(c.lambda_n, 1.0);
    ASSERT_TRUE(c.selected_by_evidence.has_value());
    EXPECT_EQ(*c.selected_by_evidence, 0u);
}

TEST(Select, InvariantToCommonShift) {
    SplitMix64 rng(2);
    const std::vector<std::size_t> dims{2, 3, 4};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<IcResult> base, shifted;
        const double shift = 1e3 * (rng.uniform() - 0.5);
        for (std::size_t k = 0; k < 3; ++k) {
            const double ll = -1000.0 + 10.0 * rng.uniform();
            base.push_back(with_loglik("m", dims[k], 1000, ll));
            shifted.push_back(with_loglik("m", dims[k], 1000, ll + shift));
            base.back().generalized_ic = generalized_ic(ll, loglog_penalty(dims), k, 1000.0);
            shifted.back().generalized_ic = generalized_ic(ll + shift, loglog_penalty(dims), k, 1000.0);
        }
        for (auto c : {Criterion::aic, Criterion::bic, Criterion::generalized})
            EXPECT_EQ(select(base, c), select(shifted, c));
    }
}

TEST(IcCsv, RowFormat) {
    auto r = with_loglik("sv", 2, 1000, -1500.25);
    EXPECT_EQ(ic_csv_header(), "model,d,n,loglik,aic,bic,log_evidence");
    EXPECT_EQ(ic_csv_row(r).substr(0, 22), "sv,2,1000,-1500.25,300");
    EXPECT_EQ(ic_csv_row(r).substr(ic_csv_row(r).size() - 3), ",NA");
    r.log_evidence = -1510.5;
    EXPECT_EQ(ic_csv_row(r).substr(ic_csv_row(r).size() - 7), "-1510.5");
}

TEST(Laplace, TrivialCaseCancels) {
    EXPECT_EQ(laplace_log_evidence(-123.456, 1, 2.0 * std::numbers::pi, 0.0, 0.0), -123.456);
}

TEST(Laplace, InformationProjection) {
    Eigen::MatrixXd m(2, 2);
    m << 2.0, 0.0, 0.0, -1.0;
    const auto info = make_information(m, 1e-8, 0.5);
    EXPECT_TRUE(info.projected);
    EXPECT_NEAR(info.log_det, std::log(2.0) + std::log(0.5), 1e-12);
    Eigen::MatrixXd pd(2, 2);
    pd << 2.0, 0.5, 0.5, 1.0;
    const auto ok = make_information(pd);
    EXPECT_FALSE(ok.projected);
    EXPECT_NEAR(ok.log_det, std::log(1.75), 1e-12);
    EXPECT_THROW(make_information(-pd), EvidenceUnavailableError);
}

TEST(Laplace, ParticleHessianAgreesWithKalman) {
    const auto traj = simulate<LG>({0.9, std::sqrt(0.3), 1.0}, 500, 3);
    const auto mle = kalman_mle(traj.observations, Theta<LG>::from_natural({0.5, 1.0, 1.0}));
    ASSERT_TRUE(mle.converged);
    const LogPrior<LG> prior = standard_normal_log_prior<3>;
    const auto particle = laplace_log_evidence<LG>(mle.loglik_at_mle, mle.theta_hat, traj.observations, prior,
                                                   4000, 17);
    const auto exact = make_information(kalman_information(mle.theta_hat, traj.observations));
    const double exact_evidence =
        laplace_log_evidence(mle.loglik_at_mle, 3, 500.0, exact.log_det, prior(mle.theta_hat.unconstrained()));
    EXPECT_LT(std::abs(particle.log_evidence - exact_evidence), 0.5);
}

TEST(Laplace, NestedKalmanFitsDominate) {
    const LG::Params truth{0.9, std::sqrt(0.3), 1.0};
    KalmanMleOptions restricted;
    restricted.free = {false, true, true};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto y = simulate<LG>(truth, 2000, 900 + seed).observations;
        const auto big = kalman_mle(y, Theta<LG>::from_natural(truth));
        const auto small = kalman_mle(y, Theta<LG>::from_natural(truth), restricted);
        const auto c = compare({with_loglik("small", 2, 2000, small.loglik_at_mle),
                                with_loglik("big", 3, 2000, big.loglik_at_mle)},
                               0, 1);
        EXPECT_GE(c.lambda_n, -1e-6);
    }
}

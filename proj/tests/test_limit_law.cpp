#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "homoscale/limit_law.hpp"

using namespace homoscale;

namespace {

const DiffusionModel& ou() {
    static const DiffusionModel m = DiffusionModel::ou(1.0, std::numbers::sqrt2);
    return m;
}

const SpaceTimeGrid kGrid{-15.0, 15.0, 601, 0.5, 200};

const MacroSolution& u0() {
    static const MacroSolution u = solve_u0(1.3, Iota::gaussian(), kGrid);
    return u;
}

// Var of int_0^tau xi ds for stationary OU(1, sqrt 2), scaled by 1/tau.
double ou_finite_time_variance(double tau) { return 2.0 * (tau - 1.0 + std::exp(-tau)) / tau; }

}  // namespace

TEST(Q0Variance, ZeroLambdaIsDeterministic) {
    const LimitSPDE s{1.3, 0.0, &u0()};
    EXPECT_EQ(q0_variance(s, TestFunction::gaussian(0, 1, "g")), 0.0);
    const auto q = sample_q0(s, 4);
    EXPECT_EQ(q.max_abs_all(), 0.0);
}

TEST(Q0Variance, LinearInLambda) {
    const auto phi = TestFunction::gaussian(0.5, 0.7, "g");
    const double v1 = q0_variance({1.3, 1.0, &u0()}, phi);
    EXPECT_GT(v1, 0.0);
    EXPECT_NEAR(q0_variance({1.3, 3.5, &u0()}, phi), 3.5 * v1, 1e-14 * v1);
    EXPECT_THROW((void)q0_variance({1.3, -1.0, &u0()}, phi), InvalidArgument);
    EXPECT_THROW((void)q0_variance({1.3, 1.0, nullptr}, phi), MissingIngredient);
}

TEST(Q0Variance, QuadratureMatchesClosedForm) {
    for (const auto& phi : default_phi_dictionary()) {
        if (phi.kind != TestFunction::Kind::gaussian) continue;
        SCOPED_TRACE(phi.name);
        // Second order in dx: the gap shrinks about four-fold on the finer grid.
        const double ref = q0_variance_gaussian(1.3, 2.0, 1.0, kGrid.T, phi);
        const double coarse = q0_variance({1.3, 2.0, &u0()}, phi) / ref - 1.0;
        SpaceTimeGrid fine = kGrid;
        fine.nx = 2 * kGrid.nx - 1;
        const auto u0f = solve_u0(1.3, Iota::gaussian(), fine);
        const double finer = q0_variance({1.3, 2.0, &u0f}, phi) / ref - 1.0;
        EXPECT_LT(std::abs(coarse), 4e-4);
        EXPECT_LT(std::abs(finer), 1.2e-4);
    }
    EXPECT_THROW((void)q0_variance_gaussian(1.3, 1.0, 1.0, 0.5, TestFunction::odd(0, 1, "o")), InvalidArgument);
}

TEST(Q0Variance, OddFunctionalOfEvenDataVanishes) {
    EXPECT_LT(q0_variance({1.3, 1.0, &u0()}, TestFunction::odd(0.0, 1.0, "o")), 1e-25);
}

TEST(Q0Covariance, SymmetricAndCauchySchwarz) {
    const auto p1 = TestFunction::gaussian(0.0, 1.0, "a"), p2 = TestFunction::gaussian(1.0, 0.5, "b");
    const LimitSPDE s{1.3, 1.0, &u0()};
    const double c12 = q0_covariance(s, p1, p2), c21 = q0_covariance(s, p2, p1);
    EXPECT_DOUBLE_EQ(c12, c21);
    EXPECT_LE(c12 * c12, q0_variance(s, p1) * q0_variance(s, p2) * (1 + 1e-12));
}

TEST(Q0Covariance, ParallelogramIdentity) {
    const LimitSPDE s{1.3, 1.0, &u0()};
    const auto p1 = TestFunction::gaussian(0.0, 1.0, "a"), p2 = TestFunction::odd(0.5, 0.8, "b");
    auto sum = [&](double x) { return p1(x) + p2(x); };
    auto diff = [&](double x) { return p1(x) - p2(x); };
    const double lhs = q0_variance(s, sum) + q0_variance(s, diff);
    const double rhs = 2.0 * q0_variance(s, p1) + 2.0 * q0_variance(s, p2);
    EXPECT_NEAR(lhs, rhs, 1e-12 * rhs);
    EXPECT_NEAR(q0_covariance(s, p1, p2), 0.25 * (q0_variance(s, sum) - q0_variance(s, diff)), 1e-12 * rhs);
}

TEST(Q0Sampler, EnsembleMatchesQuadrature) {
    const LimitSPDE s{1.3, 1.0, &u0()};
    const auto phi = TestFunction::gaussian(0.0, 1.0, "g");
    const Q0Sampler sampler(s);
    std::vector<double> x;
    for (std::uint64_t k = 0; k < 2000; ++k) x.push_back(functional(sampler.sample(task_seed(5, 1, k)), phi));
    const auto sm = stats::summarize(x);
    const double v = q0_variance(s, phi);
    EXPECT_LT(std::abs(sm.mean), 4.0 * sm.se());
    EXPECT_TRUE(stats::variance_ci(sm, 0.99).contains(v)) << sm.variance << " vs " << v;
    EXPECT_NEAR(sm.variance / v, 1.0, 0.1);
}

TEST(Q0Sampler, EnsembleMeanFieldVanishes) {
    const Q0Sampler sampler({1.3, 1.0, &u0()});
    const std::size_t N = 500;
    std::vector<std::vector<double>> rows(kGrid.nx);
    for (std::uint64_t k = 0; k < N; ++k) {
        const auto q = sampler.sample(task_seed(6, 1, k));
        for (std::size_t i = 0; i < kGrid.nx; i += 25) rows[i].push_back(q(kGrid.nt, i));
    }
    for (std::size_t i = 25; i + 1 < kGrid.nx; i += 25) {
        const auto sm = stats::summarize(rows[i]);
        EXPECT_LT(std::abs(sm.mean), 4.0 * sm.se()) << "x = " << kGrid.x(i);
    }
}

TEST(Q0Sampler, SameSeedSamePath) {
    const Q0Sampler sampler({1.3, 1.0, &u0()});
    const auto a = sampler.sample(11), b = sampler.sample(11), c = sampler.sample(12);
    EXPECT_EQ(a(kGrid.nt, 300), b(kGrid.nt, 300));
    EXPECT_NE(a(kGrid.nt, 300), c(kGrid.nt, 300));
}

TEST(Invariance, FiniteTimeVarianceOfOU) {
    // tau = t / eps^alpha = 5: the exact finite-time variance is 1.60, not 2.
    const auto v = invariance_variance(ou(), [](double y) { return y; }, 0.2, 1.0, 1.0, 1500, {0.01, 21});
    const auto sm = stats::Summary{v.n, v.mean, v.variance};
    EXPECT_TRUE(stats::variance_ci(sm, 0.99).contains(ou_finite_time_variance(5.0))) << v.variance;
    EXPECT_LT(std::abs(v.mean), 4.0 * sm.se());
}

TEST(Invariance, ZeroProfileGivesZero) {
    const auto v = invariance_variance(ou(), [](double) { return 0.0; }, 0.2, 1.0, 1.0, 20);
    EXPECT_EQ(v.variance, 0.0);
    EXPECT_EQ(v.mean, 0.0);
}

TEST(Invariance, VarianceGrowsLinearlyInTime) {
    // tau = t / eps^alpha >= 56 for every t, so the finite-time bias stays below 2%.
    const std::vector<double> times{0.5, 1.0, 2.0};
    const auto rows = invariance_samples(ou(), [](double y) { return y; }, 0.1, 2.5, times, 1000, {0.05, 8});
    std::vector<double> var;
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::vector<double> x;
        for (const auto& r : rows) x.push_back(r[k]);
        var.push_back(stats::summarize(x).variance);
    }
    EXPECT_NEAR(stats::linear_fit(times, var).slope, 2.0, 0.2);
}

TEST(Invariance, SeveralTimesOnOnePath) {
    const auto rows = invariance_samples(ou(), [](double y) { return y; }, 0.3, 1.0, {0.25, 1.0}, 3, {0.01, 2});
    const auto last = invariance_samples(ou(), [](double y) { return y; }, 0.3, 1.0, {1.0}, 3, {0.01, 2});
    for (std::size_t p = 0; p < 3; ++p) EXPECT_NEAR(rows[p][1], last[p][0], 1e-12);
}

TEST(Invariance, RejectsBadInput) {
    auto g = [](double y) { return y; };
    EXPECT_THROW((void)invariance_samples(ou(), [](double y) { return y + 1.0; }, 0.2, 1.0, {1.0}, 2), NotCentered);
    EXPECT_THROW((void)invariance_samples(ou(), g, 0.2, 1.0, {1.0, 0.5}, 2), InvalidArgument);
    EXPECT_THROW((void)invariance_samples(ou(), g, 0.2, 1.0, {}, 2), InvalidArgument);
    EXPECT_THROW((void)invariance_samples(ou(), g, 0.0, 1.0, {1.0}, 2), InvalidArgument);
}

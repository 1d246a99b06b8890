#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "homoscale/oscillatory.hpp"

using namespace homoscale;

namespace {

const DiffusionModel& ou() {
    static const DiffusionModel m = DiffusionModel::ou(1.0, std::numbers::sqrt2);
    return m;
}

const SpaceTimeGrid kSmall{-12.0, 12.0, 241, 0.2, 40};

EpsProblem problem(const Coefficient& c, double eps, double alpha, const FineGrid& g, std::uint64_t seed = 3) {
    EpsProblem p;
    p.eps = eps;
    p.alpha = alpha;
    p.coef = c;
    p.grid = g;
    p.path = sample_problem_path(ou(), p, seed);
    return p;
}

}  // namespace

TEST(CheckAlpha, RejectsNearTwoAndNonPositive) {
    EXPECT_THROW(check_alpha(2.0), UnsupportedAlpha);
    EXPECT_THROW(check_alpha(1.9), UnsupportedAlpha);
    EXPECT_THROW(check_alpha(0.0), UnsupportedAlpha);
    EXPECT_THROW(check_alpha(-1.0), UnsupportedAlpha);
    EXPECT_NO_THROW(check_alpha(1.8));
    EXPECT_NO_THROW(check_alpha(2.2));
}

TEST(ResolutionAdvice, ReferenceGridAtAlphaOne) {
    const SpaceTimeGrid m{-18.0, 18.0, 1201, 0.5, 1000};
    const auto a = resolution_advice(0.05, 1.0, m);
    EXPECT_EQ(a.grid.rx, 10u);  // macro dx 0.03 against 0.05/16
    EXPECT_EQ(a.grid.rt, 1u);   // macro dt 5e-4 already below dx
    EXPECT_EQ(a.grid.nx(), 12001u);
    EXPECT_DOUBLE_EQ(a.dx_max, 0.05 / 16.0);
    EXPECT_LE(a.grid.dx(), a.dx_max);
    EXPECT_LE(a.grid.dt(), a.dt_max);
}

TEST(ResolutionAdvice, AlphaThreeTimeStepFollowsEpsPower) {
    const SpaceTimeGrid m{-15.0, 15.0, 601, 0.25, 250};
    const auto a = resolution_advice(0.05, 3.0, m);
    EXPECT_NEAR(a.dt_max, std::pow(0.05, 3) / 4.0, 1e-15);
    EXPECT_EQ(a.grid.rt, 32u);
    EXPECT_LE(a.grid.dt(), a.dt_max);
}

TEST(ResolutionAdvice, BudgetAndRange) {
    EXPECT_THROW((void)resolution_advice(0.05, 1.0, kSmall, 10.0), Unaffordable);
    EXPECT_THROW((void)resolution_advice(0.01, 1.0, kSmall), InvalidArgument);
    EXPECT_THROW((void)resolution_advice(0.6, 1.0, kSmall), InvalidArgument);
    EXPECT_THROW((void)resolution_advice(0.1, 2.0, kSmall), UnsupportedAlpha);
}

TEST(SolveEps, ConstantCoefficientIsTheHeatKernel) {
    const double a = 1.5;
    const auto g = resolution_advice(0.1, 1.0, kSmall).grid;
    const auto run = solve_eps(problem(Coefficient::constant(a), 0.1, 1.0, g));
    double err = 0.0;
    for (std::size_t i = 0; i < g.nx(); ++i)
        err = std::max(err, std::abs(run.final_slice[i] - gaussian_heat(a, 1.0, g.x(i), g.T())));
    EXPECT_LT(err, 1e-4);
}

TEST(SolveEps, MassIsConserved) {
    const auto g = resolution_advice(0.1, 1.0, kSmall).grid;
    const auto run = solve_eps(problem(Coefficient::product(), 0.1, 1.0, g));
    EXPECT_NEAR(run.mass0, std::sqrt(2.0 * std::numbers::pi), 1e-9);
    EXPECT_LT(run.max_mass_drift, 1e-7);
}

TEST(SolveEps, MaximumPrinciple) {
    const auto g = resolution_advice(0.1, 1.0, kSmall).grid;
    const auto run = solve_eps(problem(Coefficient::product(), 0.1, 1.0, g));
    EXPECT_LE(run.max_abs, 1.0 + 1e-12);
    for (double v : run.final_slice) EXPECT_GT(v, -1e-12);
}

TEST(SolveEps, SameSeedSameResult) {
    const auto g = resolution_advice(0.1, 1.0, kSmall).grid;
    const auto a = solve_eps(problem(Coefficient::product(), 0.1, 1.0, g, 9));
    const auto b = solve_eps(problem(Coefficient::product(), 0.1, 1.0, g, 9));
    const auto c = solve_eps(problem(Coefficient::product(), 0.1, 1.0, g, 10));
    EXPECT_EQ(a.final_slice, b.final_slice);
    EXPECT_NE(a.final_slice, c.final_slice);
}

TEST(SolveEps, ObserverSeesEverySlice) {
    const auto g = resolution_advice(0.1, 1.0, kSmall).grid;
    std::size_t calls = 0, last = 0;
    (void)solve_eps(problem(Coefficient::product(), 0.1, 1.0, g), [&](std::size_t n, std::span<const double> u) {
        EXPECT_EQ(n, calls);
        EXPECT_EQ(u.size(), g.nx());
        ++calls;
        last = n;
    });
    EXPECT_EQ(calls, g.nt() + 1);
    EXPECT_EQ(last, g.nt());
}

namespace {

// Max difference at macro nodes between consecutive refinements (x1, x2, x4)
// on one path sampled for the finest grid.
std::pair<double, double> refinement_gaps(const Coefficient& c, std::uint64_t seed) {
    const SpaceTimeGrid m{-10.0, 10.0, 101, 0.1, 20};
    const double eps = 0.2;
    const auto base = resolution_advice(eps, 1.0, m).grid;
    FineGrid finest = base;
    finest.rx *= 4;
    finest.rt *= 4;
    const EpsProblem ref = problem(c, eps, 1.0, finest, seed);
    std::vector<std::vector<double>> at_macro;
    for (std::size_t r : {1u, 2u, 4u}) {
        EpsProblem p = ref;
        p.grid = base;
        p.grid.rx *= r;
        p.grid.rt *= r;
        const auto run = solve_eps(p);
        std::vector<double> v;
        for (std::size_t i = 0; i < m.nx; ++i) v.push_back(run.final_slice[i * p.grid.rx]);
        at_macro.push_back(std::move(v));
    }
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < m.nx; ++i) {
        d1 = std::max(d1, std::abs(at_macro[0][i] - at_macro[1][i]));
        d2 = std::max(d2, std::abs(at_macro[1][i] - at_macro[2][i]));
    }
    return {d1, d2};
}

}  // namespace

TEST(SolveEps, SecondOrderForFrozenCoefficient) {
    const auto [d1, d2] = refinement_gaps(Coefficient(2.0, {{ZBasis::sin, 1, 0, 1.0}}), 5);
    EXPECT_GT(d1, 0.0);
    EXPECT_GT(d1 / d2, 3.0);
}

TEST(SolveEps, ConvergesOnAveragePerPath) {
    // A time-rough coefficient leaves a random O(dt) sampling error; single
    // paths give noisy ratios, the seed average does not.
    double s1 = 0.0, s2 = 0.0;
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto [d1, d2] = refinement_gaps(Coefficient::product(), seed);
        s1 += d1;
        s2 += d2;
    }
    EXPECT_GT(s1 / s2, 1.5);
    EXPECT_LT(s2 / 6.0, 5e-3);
}

TEST(SolveEps, RejectsUnderResolvedGrid) {
    FineGrid g{kSmall, 1, 1};
    EpsProblem p = problem(Coefficient::product(), 0.1, 1.0, resolution_advice(0.1, 1.0, kSmall).grid);
    p.grid = g;
    EXPECT_THROW((void)solve_eps(p), ResolutionViolation);
}

TEST(SolveEps, RejectsShortPath) {
    const auto g = resolution_advice(0.1, 1.0, kSmall).grid;
    EpsProblem p = problem(Coefficient::product(), 0.1, 1.0, g);
    p.path = sample_path(ou(), path_dt_for(p), 0.5 * g.T() / p.eps, 1);
    EXPECT_THROW((void)solve_eps(p), PathTooShort);
}

TEST(SolveEpsField, StrideKeepsSlices) {
    const auto g = resolution_advice(0.1, 1.0, kSmall).grid;
    const auto p = problem(Coefficient::product(), 0.1, 1.0, g);
    const auto field = solve_eps_field(p, 4);
    const auto run = solve_eps(p);
    EXPECT_EQ(field.grid().nt, g.nt() / 4);
    const auto last = field.at(field.grid().nt);
    for (std::size_t i = 0; i < g.nx(); ++i) EXPECT_EQ(last[i], run.final_slice[i]);
    EXPECT_THROW((void)solve_eps_field(p, 3), InvalidArgument);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "homoscale/experiments.hpp"

using namespace homoscale;

namespace {

const DiffusionModel& ou() {
    static const DiffusionModel m = DiffusionModel::ou(1.0, std::numbers::sqrt2);
    return m;
}

std::vector<std::string> labels(const std::vector<PlanTerm>& t) {
    std::vector<std::string> out;
    for (const auto& x : t) out.push_back(x.label);
    return out;
}

}  // namespace

TEST(Exponents, TableOfCases) {
    struct Row { double alpha, delta; int J0, J1; AlphaCase c; };
    for (const auto& r : {Row{1.0, 1.0, 1, 0, AlphaCase::sub}, Row{1.5, 0.5, 2, 0, AlphaCase::sub},
                          Row{0.5, 1.5, 1, 0, AlphaCase::sub}, Row{3.0, 1.0, 2, 1, AlphaCase::super_low},
                          Row{5.0, 3.0, 1, 2, AlphaCase::super_high}, Row{4.0, 2.0, 2, 2, AlphaCase::critical}}) {
        SCOPED_TRACE(r.alpha);
        const auto p = exponents(r.alpha);
        EXPECT_DOUBLE_EQ(p.delta, r.delta);
        EXPECT_EQ(p.J0, r.J0);
        EXPECT_EQ(p.J1, r.J1);
        EXPECT_EQ(p.N0, 2 * r.J0 + 2);
        EXPECT_EQ(p.alpha_case, r.c);
        EXPECT_GT(std::min({p.delta + 1.0, p.J1 + 1.0, p.delta * p.J0}), r.alpha / 2.0);
    }
}

TEST(Exponents, CriticalAlphaWarns) {
    EXPECT_FALSE(exponents(4.0).warnings.empty());
    EXPECT_TRUE(exponents(3.0).warnings.empty());
}

TEST(Exponents, UnsupportedAlpha) {
    for (double a : {2.0, 1.85, 2.1, 0.0, -0.5}) EXPECT_THROW((void)exponents(a), UnsupportedAlpha);
}

TEST(Exponents, OverrideDowngradesInvariantToWarning) {
    // alpha = 3 with J0 = 1: delta J0 = 1 <= 3/2.
    ExpansionOptions o;
    o.j0_override = 1;
    const auto p = exponents(3.0, o);
    EXPECT_EQ(p.J0, 1);
    EXPECT_EQ(p.N0, 4);
    EXPECT_EQ(p.warnings.size(), 2u);
    o.j0_override = 0;
    EXPECT_THROW((void)exponents(3.0, o), InvalidArgument);
}

TEST(ExpansionPlan, TheoremTermsAlphaThree) {
    const auto p = exponents(3.0);
    EXPECT_EQ(labels(p.terms), (std::vector<std::string>{"u^0", "u^1", "u^2", "v^1", "chi^0 d_x^1 v^0"}));
    const auto pw = term_powers(p.terms);
    EXPECT_EQ(pw, (std::set<double>{0.0, 1.0, 2.0}));
    EXPECT_EQ(required_derivative_order(p.terms), 1);
}

TEST(ExpansionPlan, TheoremTermsAlphaFive) {
    const auto p = exponents(5.0);
    EXPECT_EQ(labels(p.terms), (std::vector<std::string>{"u^0", "u^1", "v^1", "chi^0 d_x^1 v^0", "v^2",
                                                         "chi^0 d_x^1 v^1", "chi^1 d_x^2 v^0"}));
    EXPECT_EQ(required_derivative_order(p.terms), 2);
    // u^1 carries eps^delta = eps^3.
    EXPECT_DOUBLE_EQ(p.terms[1].power, 3.0);
}

TEST(ExpansionPlan, EveryMacroIndexAppearsOnce) {
    // Each u^k (k <= J0) and each pair (v^{k-l}, chi^{l-1}) is a distinct term.
    for (double a : {1.0, 1.5, 3.0, 5.0, 6.0}) {
        const auto p = exponents(a);
        std::set<std::tuple<int, int, int, int>> seen;
        for (const auto& t : p.terms)
            EXPECT_TRUE(seen.insert({static_cast<int>(t.kind), t.k, t.chi, t.deriv}).second) << t.label;
        std::size_t expect = static_cast<std::size_t>(p.J0 + 1);
        for (int k = 1; k <= p.J1; ++k) expect += 1 + static_cast<std::size_t>(k);
        EXPECT_EQ(p.terms.size(), expect);
    }
}

TEST(ExpansionPlan, SubFullTermsAddCorrectorLayer) {
    const auto p = exponents(1.0);
    EXPECT_EQ(labels(p.full_terms()),
              (std::vector<std::string>{"u^0", "chi^0 d_x u^0", "chi^1 d_x u^0", "u^1", "chi^0 d_x u^1"}));
    EXPECT_DOUBLE_EQ(p.full_terms()[1].power, 1.0);
    EXPECT_DOUBLE_EQ(p.full_terms()[2].power, 2.0);
    ExpansionOptions o;
    o.include_u1 = false;
    EXPECT_EQ(exponents(1.0, o).terms.size(), 1u);
}

TEST(ExpansionField, ConstantCoefficientGivesU0) {
    const auto s = build_setup(ou(), Coefficient::constant(1.7), Regime::sub);
    const auto plan = exponents(1.0);
    const SpaceTimeGrid m{-12.0, 12.0, 241, 0.2, 40};
    const auto h = build_macro(*s, plan, m, Iota::gaussian());
    const auto fg = resolution_advice(0.1, 1.0, m).grid;
    ExpansionField E(plan.full_terms(), *h, s->cs, 0.1, fg);
    EXPECT_FALSE(E.random());
    std::vector<double> e(fg.nx());
    for (std::size_t mstep : {0u, 17u, 40u}) {
        E.evaluate(mstep * fg.rt, 0.3, e);
        for (std::size_t i = 0; i < m.nx; ++i) EXPECT_NEAR(e[i * fg.rx], h->u(0)(mstep, i), 1e-12);
    }
}

TEST(ExpansionField, InterpolatesBetweenMacroSlices) {
    const auto s = build_setup(ou(), Coefficient::product(), Regime::sub);
    const auto plan = exponents(1.0);
    const SpaceTimeGrid m{-12.0, 12.0, 241, 0.2, 40};
    const auto h = build_macro(*s, plan, m, Iota::gaussian());
    FineGrid fg = resolution_advice(0.1, 1.0, m).grid;
    fg.rt = 4;
    ExpansionField E({plan.terms.front()}, *h, s->cs, 0.1, fg);
    std::vector<double> e(fg.nx());
    // Walk backwards and forwards so the two-slice cache is exercised.
    for (std::size_t n : {9u, 7u, 8u, 13u, 6u}) {
        E.evaluate(n, 0.0, e);
        const std::size_t m0 = n / 4;
        const double th = static_cast<double>(n % 4) / 4.0;
        for (std::size_t i = 0; i < m.nx; i += 10)
            EXPECT_NEAR(e[i * fg.rx], (1 - th) * h->u(0)(m0, i) + th * h->u(0)(m0 + 1, i), 1e-12);
    }
}

TEST(ExpansionField, MissingIngredientAndGridMismatch) {
    const auto s = build_setup(ou(), Coefficient::product(), Regime::sub);
    const auto plan = exponents(1.0);
    const SpaceTimeGrid m{-12.0, 12.0, 241, 0.2, 40};
    MacroHierarchy h(make_macro_constants(s->ec, s->tables.C, plan.J0), Iota::gaussian(), m);
    h.solve_u(0);
    const auto fg = resolution_advice(0.1, 1.0, m).grid;
    EXPECT_THROW(ExpansionField(plan.terms, h, s->cs, 0.1, fg), MissingIngredient);
    FineGrid other = fg;
    other.macro.T = 0.3;
    EXPECT_THROW(ExpansionField({plan.terms.front()}, h, s->cs, 0.1, other), GridMismatch);
    PlanTerm deep{PlanTerm::Kind::chi_du, 0, 0, 9, 1.0, "deep"};
    EXPECT_THROW(ExpansionField({deep}, h, s->cs, 0.1, fg), DerivativeOrderExceeded);
}

TEST(ExpansionField, YDependentCorrectorMakesItRandom) {
    const auto s = build_setup(ou(), Coefficient::product(), Regime::sub);
    const auto plan = exponents(1.0);
    const SpaceTimeGrid m{-12.0, 12.0, 241, 0.2, 40};
    const auto h = build_macro(*s, plan, m, Iota::gaussian());
    const auto fg = resolution_advice(0.1, 1.0, m).grid;
    ExpansionField theorem(plan.terms, *h, s->cs, 0.1, fg);
    ExpansionField full(plan.full_terms(), *h, s->cs, 0.1, fg);
    EXPECT_FALSE(theorem.random());
    EXPECT_TRUE(full.random());
    std::vector<double> a(fg.nx()), b(fg.nx());
    full.evaluate(5, -1.0, a);
    full.evaluate(5, 1.0, b);
    EXPECT_NE(a, b);
}

TEST(QEps, ScaledDifferenceIsLinear) {
    const std::vector<double> u1{1, 2, 3}, u2{0.5, -1, 4}, e1{1, 1, 1}, e2{0, 2, 0};
    const double eps = 0.1, alpha = 1.0;
    const auto q1 = q_eps(u1, e1, alpha, eps), q2 = q_eps(u2, e2, alpha, eps);
    std::vector<double> us(3), es(3);
    for (int i = 0; i < 3; ++i) {
        us[i] = 2 * u1[i] + u2[i];
        es[i] = 2 * e1[i] + e2[i];
    }
    const auto qs = q_eps(us, es, alpha, eps);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(qs[i], 2 * q1[i] + q2[i], 1e-12);
    EXPECT_NEAR(q1[2], 2.0 / std::sqrt(0.1), 1e-12);
    EXPECT_THROW((void)q_eps(u1, std::vector<double>{1, 2}, alpha, eps), GridMismatch);
    MacroSolution a({-1, 1, 5, 1, 2}, 0), b({-1, 1, 5, 1, 3}, 0);
    EXPECT_THROW((void)q_eps(a, b, alpha, eps), GridMismatch);
}

TEST(Functional, GaussianAgainstClosedForm) {
    // phi integrates to sqrt(2 pi w) over the line; q = 1 on [0, T].
    const SpaceTimeGrid g{-20.0, 20.0, 4001, 0.7, 7};
    MacroSolution q(g, 0);
    for (std::size_t n = 0; n <= g.nt; ++n) std::fill(q.at(n).begin(), q.at(n).end(), 1.0);
    for (const auto& phi : {TestFunction::gaussian(0.0, 1.0, "a"), TestFunction::gaussian(1.0, 0.5, "b")})
        EXPECT_NEAR(functional(q, phi), 0.7 * std::sqrt(2.0 * std::numbers::pi * phi.width), 1e-10);
    EXPECT_NEAR(functional(q, TestFunction::odd(0.0, 1.0, "c")), 0.0, 1e-12);
}

TEST(Functional, StreamingMatchesStored) {
    const SpaceTimeGrid g{-15.0, 15.0, 301, 0.5, 10};
    const auto u = solve_u0(1.3, Iota::gaussian(), g);
    const auto phis = default_phi_dictionary();
    FunctionalAccumulator acc(g, phis);
    for (std::size_t n = 0; n <= g.nt; ++n) acc.add(n, u.at(n));
    for (std::size_t k = 0; k < phis.size(); ++k) EXPECT_NEAR(acc.values()[k], functional(u, phis[k]), 1e-13);
}

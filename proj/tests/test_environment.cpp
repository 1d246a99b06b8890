#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "homoscale/environment.hpp"

using namespace homoscale;

namespace {

DiffusionModel reference() { return DiffusionModel::ou(1.0, std::numbers::sqrt2); }

double max_interior(std::span<const double> r, std::size_t skip = 0) {
    double m = 0.0;
    for (std::size_t i = skip; i + skip < r.size(); ++i) m = std::max(m, std::abs(r[i]));
    return m;
}

}  // namespace

TEST(InvariantDensity, StandardNormal) {
    auto m = reference();
    const auto& g = m.y_grid();
    double mass = 0.0;
    for (std::size_t i = 0; i + 1 < g.size(); ++i) mass += 0.5 * g.spacing() * (m.density()[i] + m.density()[i + 1]);
    EXPECT_NEAR(mass, 1.0, 1e-10);
    for (std::size_t i = 0; i < g.size(); i += 17) {
        const double y = g.node(i);
        EXPECT_NEAR(m.density()[i], std::exp(-0.5 * y * y) / std::sqrt(2 * std::numbers::pi), 1e-14);
    }
}

TEST(InvariantDensity, OUVarianceHalf) {
    auto m = DiffusionModel::ou(2.0, std::numbers::sqrt2);
    const auto& g = m.y_grid();
    double var = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) var += g.weights()[i] * g.node(i) * g.node(i);
    EXPECT_NEAR(var, 0.5, 1e-10);
}

TEST(InvariantDensity, QuarticCustom) {
    auto m = DiffusionModel::custom([](double y) { return -y * y * y; }, [](double) { return std::numbers::sqrt2; });
    const auto& g = m.y_grid();
    // Closed form p = exp(-y^4/4)/Z.
    double z = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        z += (i == 0 || i + 1 == g.size() ? 0.5 : 1.0) * g.spacing() * std::exp(-std::pow(g.node(i), 4) / 4);
    for (std::size_t i = 0; i < g.size(); i += 11)
        EXPECT_NEAR(m.density()[i], std::exp(-std::pow(g.node(i), 4) / 4) / z, 1e-9);
    // Weak stationarity: int (L f) p = 0 for smooth test functions.
    for (double k : {0.5, 1.0, 2.0}) {
        // Generator applied analytically so only p is under test.
        std::vector<double> Lf(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = g.node(i), c = 0.7 * k;
            const double d1 = k * std::cos(k * y) - c * std::sin(c * y);
            const double d2 = -k * k * std::sin(k * y) - c * c * std::cos(c * y);
            Lf[i] = -y * y * y * d1 + d2;
        }
        EXPECT_LT(std::abs(y_average(g, Lf)), 1e-6) << "k=" << k;
    }
}

TEST(InvariantDensity, NonIntegrableDetected) {
    // Nearly flat density on the window: b = -1e-3 y, q = 2.
    EXPECT_THROW(DiffusionModel::custom([](double y) { return -1e-3 * y; }, [](double) { return std::numbers::sqrt2; }),
                 NonIntegrable);
}

TEST(Poisson, ZeroSource) {
    auto m = reference();
    const auto s = m.solve_poisson(std::vector<double>(m.y_grid().size(), 0.0));
    EXPECT_EQ(max_abs(s.Q), 0.0);
}

TEST(Poisson, LinearSource) {
    auto m = reference();
    const auto& g = m.y_grid();
    std::vector<double> src(g.nodes().begin(), g.nodes().end());
    const auto s = m.solve_poisson(src);
    double e = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) e = std::max(e, std::abs(s.Q[i] + g.node(i)));
    EXPECT_LT(e, 1e-10);
    EXPECT_LT(max_abs(m.poisson_residual(s.Q, src)), 1e-8);
}

TEST(Poisson, QuadraticSource) {
    auto m = reference();
    const auto& g = m.y_grid();
    std::vector<double> src(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) src[i] = g.node(i) * g.node(i) - 1.0;
    const auto s = m.solve_poisson(src);
    double e = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) e = std::max(e, std::abs(s.Q[i] + 0.5 * g.node(i) * g.node(i)));
    EXPECT_LT(e, 1e-9);
    EXPECT_LT(max_abs(m.poisson_residual(s.Q, src)), 1e-8);
}

TEST(Poisson, SmoothSourceInteriorResidual) {
    auto m = reference();
    const auto& g = m.y_grid();
    std::vector<double> src(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) src[i] = std::tanh(g.node(i));
    const auto s = m.solve_poisson(src);
    const auto r = m.poisson_residual(s.Q, src);
    EXPECT_LT(max_interior(r, 2), 1e-6);
}

TEST(Poisson, NotCentered) {
    auto m = reference();
    std::vector<double> src(m.y_grid().size(), 1.0);
    EXPECT_THROW((void)m.solve_poisson(src), NotCentered);
}

TEST(CltVariance, LinearIsTwo) {
    auto m = reference();
    std::vector<double> src(m.y_grid().nodes().begin(), m.y_grid().nodes().end());
    EXPECT_NEAR(m.clt_variance(src), 2.0, 1e-8);
    EXPECT_EQ(m.clt_variance(std::vector<double>(src.size(), 0.0)), 0.0);
    for (auto& v : src) v *= 3.0;
    EXPECT_NEAR(m.clt_variance(src), 18.0, 1e-7);
}

TEST(SamplePath, StationaryVariance) {
    auto m = reference();
    const int n = 10000;
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < n; ++k) {
        const auto p = sample_path(m, 0.1, 1.0, 1000 + k);
        const double x = p.values.back();
        s += x;
        s2 += x * x;
    }
    const double var = s2 / n - (s / n) * (s / n);
    EXPECT_NEAR(var, 1.0, 3.0 * std::sqrt(2.0 / n));
}

TEST(SamplePath, DeterministicDecay) {
    const auto p = sample_path_from(OUParams{1.0, 0.0}, 2.0, 0.01, 2.0, 5);
    for (std::size_t k = 0; k < p.values.size(); ++k)
        EXPECT_NEAR(p.values[k], 2.0 * std::exp(-0.01 * static_cast<double>(k)), 1e-13);
    EXPECT_EQ(p.values.size(), 201u);
}

TEST(SamplePath, Reproducible) {
    auto m = reference();
    const auto a = sample_path(m, 0.05, 3.0, 77);
    const auto b = sample_path(m, 0.05, 3.0, 77);
    const auto c = sample_path(m, 0.05, 3.0, 78);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, c.values);
}

TEST(SamplePath, CustomEulerStationary) {
    auto m = DiffusionModel::custom([](double y) { return -y * y * y; }, [](double) { return std::numbers::sqrt2; });
    const int n = 4000;
    double s2 = 0.0, s2p = 0.0;
    const auto& g = m.y_grid();
    for (std::size_t i = 0; i < g.size(); ++i) s2p += g.weights()[i] * g.node(i) * g.node(i);
    for (int k = 0; k < n; ++k) {
        const auto p = sample_path(m, 0.01, 2.0, 500 + k);
        s2 += p.values.back() * p.values.back();
    }
    EXPECT_NEAR(s2 / n, s2p, 4.0 * std::sqrt(2.0 / n) * s2p);
}

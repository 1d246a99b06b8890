#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "homoscale/grid.hpp"

using namespace homoscale;
constexpr double kPi = std::numbers::pi;

namespace {

YGrid gaussian_window(std::size_t n = 256, double Y = 8.0) {
    const auto y = YGrid::uniform_nodes(Y, n);
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = std::exp(-0.5 * y[i] * y[i]);
    return {Y, n, p};
}

double max_err(const TorusField& f, auto&& exact) {
    double e = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) e = std::max(e, std::abs(f[i] - exact(f.grid().node(i))));
    return e;
}

}  // namespace

TEST(TorusGrid, RejectsOddOrSmall) {
    EXPECT_THROW(TorusGrid(7), InvalidArgument);
    EXPECT_THROW(TorusGrid(6), InvalidArgument);
    EXPECT_NO_THROW(TorusGrid(8));
}

TEST(ZMean, ConstantAndOdd) {
    EXPECT_DOUBLE_EQ(z_mean(TorusField(TorusGrid(16), 3.0)), 3.0);
    auto s = TorusField::sample(TorusGrid(32), [](double z) { return std::sin(2 * kPi * z); });
    EXPECT_NEAR(z_mean(s), 0.0, 1e-14);
}

TEST(ZMean, HarmonicIntegral) {
    auto f = TorusField::sample(TorusGrid(64), [](double z) { return 1.0 / (2.0 + std::sin(2 * kPi * z)); });
    EXPECT_NEAR(z_mean(f), 1.0 / std::sqrt(3.0), 1e-12);
}

TEST(ZDerivative, Sine) {
    auto f = TorusField::sample(TorusGrid(32), [](double z) { return std::sin(2 * kPi * z); });
    EXPECT_LT(max_err(z_derivative(f), [](double z) { return 2 * kPi * std::cos(2 * kPi * z); }), 1e-12);
}

TEST(ZDerivative, ConstantGivesZero) {
    EXPECT_LT(max_abs(z_derivative(TorusField(TorusGrid(16), 5.0))), 1e-14);
}

TEST(ZDerivative, ExpSineChainRule) {
    auto f = TorusField::sample(TorusGrid(64), [](double z) { return std::exp(std::sin(2 * kPi * z)); });
    auto exact = [](double z) { return 2 * kPi * std::cos(2 * kPi * z) * std::exp(std::sin(2 * kPi * z)); };
    EXPECT_LT(max_err(z_derivative(f), exact), 1e-10);
    // Independent check against a fine-grid centered difference.
    const double h = 1e-5;
    for (std::size_t i = 0; i < f.size(); i += 7) {
        const double z = f.grid().node(i);
        const double fd = (std::exp(std::sin(2 * kPi * (z + h))) - std::exp(std::sin(2 * kPi * (z - h)))) / (2 * h);
        EXPECT_NEAR(z_derivative(f)[i], fd, 1e-6);
    }
}

TEST(ZAntiderivative, Termwise) {
    TorusGrid g(64);
    auto c = TorusField::sample(g, [](double z) { return std::cos(2 * kPi * z); });
    EXPECT_LT(max_err(z_antiderivative(c), [](double z) { return std::sin(2 * kPi * z) / (2 * kPi); }), 1e-14);
    EXPECT_LT(max_abs(z_antiderivative(TorusField(g))), 1e-300);
    auto f = TorusField::sample(g, [](double z) { return std::sin(2 * kPi * z) + std::cos(4 * kPi * z); });
    auto exact = [](double z) { return -std::cos(2 * kPi * z) / (2 * kPi) + std::sin(4 * kPi * z) / (4 * kPi); };
    EXPECT_LT(max_err(z_antiderivative(f), exact), 1e-14);
}

TEST(ZAntiderivative, NonZeroMeanRaises) {
    auto f = TorusField::sample(TorusGrid(32), [](double z) { return 1.0 + std::cos(2 * kPi * z); });
    EXPECT_THROW((void)z_antiderivative(f), NonZeroMean);
}

TEST(ZAntiderivative, DerivativeIsInverse) {
    auto f = TorusField::sample(TorusGrid(128), [](double z) {
        return std::exp(std::cos(2 * kPi * z)) * std::sin(6 * kPi * z);
    });
    f = remove_mean(f);
    auto back = z_derivative(z_antiderivative(f));
    EXPECT_LT(max_abs(back - f), 1e-10);
    EXPECT_EQ(z_mean(z_derivative(f)) == 0.0 || std::abs(z_mean(z_derivative(f))) < 1e-15, true);
}

TEST(YAverage, GaussianMoments) {
    const auto yg = gaussian_window();
    TorusGrid tg(16);
    auto y1 = ZYField::sample(tg, yg, [](double, double y) { return y; });
    auto y2 = ZYField::sample(tg, yg, [](double, double y) { return y * y; });
    EXPECT_LT(max_abs(y_average(y1)), 1e-10);
    auto m2 = y_average(y2);
    for (std::size_t i = 0; i < tg.size(); ++i) EXPECT_NEAR(m2[i], 1.0, 1e-8);
    auto st = ZYField::sample(tg, yg, [](double z, double y) { return std::sin(2 * kPi * z) * std::tanh(y); });
    EXPECT_LT(max_abs(y_average(st)), 1e-8);
}

TEST(YAverage, MonotoneAndLinear) {
    const auto yg = gaussian_window(64, 6.0);
    TorusGrid tg(8);
    auto a = ZYField::sample(tg, yg, [](double z, double y) { return 1.0 + z * y * y; });
    auto b = ZYField::sample(tg, yg, [](double, double y) { return std::cos(y); });
    auto lhs = y_average(2.0 * a + b * 3.0);
    auto rhs = 2.0 * y_average(a) + 3.0 * y_average(b);
    EXPECT_LT(max_abs(lhs - rhs), 1e-13);
    for (std::size_t i = 0; i < tg.size(); ++i) EXPECT_GE(y_average(a)[i], 0.0);
}

TEST(YAverage, WeightsNormalized) {
    const auto yg = gaussian_window();
    double s = 0.0;
    for (double w : yg.weights()) s += w;
    EXPECT_NEAR(s, 1.0, 1e-10);
}

TEST(FiniteDifference, FourthOrderConvergence) {
    auto err = [](std::size_t n, int order) {
        auto y = YGrid::uniform_nodes(2.0, n);
        std::vector<double> f(n), d(n);
        for (std::size_t i = 0; i < n; ++i) f[i] = std::sin(1.3 * y[i]) + 0.2 * y[i] * y[i] * y[i];
        const double h = y[1] - y[0];
        if (order == 1)
            fd::d1(f, h, d);
        else
            fd::d2(f, h, d);
        double e = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ex = order == 1 ? 1.3 * std::cos(1.3 * y[i]) + 0.6 * y[i] * y[i]
                                         : -1.69 * std::sin(1.3 * y[i]) + 1.2 * y[i];
            e = std::max(e, std::abs(d[i] - ex));
        }
        return e;
    };
    for (int order : {1, 2}) {
        const double rate = std::log2(err(41, order) / err(81, order));
        EXPECT_GT(rate, 3.6) << "order " << order;
    }
}

TEST(ZYField, ZOperationsPerRow) {
    const auto yg = gaussian_window(32, 4.0);
    TorusGrid tg(32);
    auto f = ZYField::sample(tg, yg, [](double z, double y) { return std::sin(2 * kPi * z) * (1 + y * y); });
    auto d = z_derivative(f);
    double e = 0.0;
    for (std::size_t j = 0; j < yg.size(); ++j)
        for (std::size_t i = 0; i < tg.size(); ++i) {
            const double y = yg.node(j), z = tg.node(i);
            e = std::max(e, std::abs(d.at(i, j) - 2 * kPi * std::cos(2 * kPi * z) * (1 + y * y)));
        }
    EXPECT_LT(e, 1e-11);
    EXPECT_LT(max_abs(z_derivative(z_antiderivative(f)) - f), 1e-11);
}

#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace homoscale::quad {

struct Rule {
    std::vector<double> x;  ///< nodes on [-1, 1]
    std::vector<double> w;
};

/// Gauss–Legendre rule with N points on [-1, 1].
template <std::size_t N>
const Rule& gauss_legendre() {
    static const Rule rule = [] {
        using G = boost::math::quadrature::gauss<double, N>;
        Rule r;
        const auto& a = G::abscissa();
        const auto& wt = G::weights();
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (a[k] == 0.0) {
                r.x.push_back(0.0);
                r.w.push_back(wt[k]);
                continue;
            }
            r.x.push_back(-a[k]);
            r.w.push_back(wt[k]);
            r.x.push_back(a[k]);
            r.w.push_back(wt[k]);
        }
        return r;
    }();
    return rule;
}

/// Lagrange basis values at `x` for the given interpolation nodes.
inline void lagrange_basis(std::span<const double> nodes, double x, std::span<double> out) {
    for (std::size_t m = 0; m < nodes.size(); ++m) {
        double l = 1.0;
        for (std::size_t k = 0; k < nodes.size(); ++k)
            if (k != m) l *= (x - nodes[k]) / (nodes[m] - nodes[k]);
        out[m] = l;
    }
}

/// Composite trapezoid on uniformly spaced samples.
inline double trapezoid(std::span<const double> f, double h) {
    if (f.size() < 2) return 0.0;
    double s = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
    return s * h;
}

}  // namespace homoscale::quad

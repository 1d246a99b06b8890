#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "homoscale/cell_problems.hpp"
#include "homoscale/drift_chain.hpp"
#include "homoscale/errors.hpp"
#include "homoscale/fft.hpp"
#include "homoscale/grid.hpp"

namespace homoscale {

/// Uniform (x, t) grid on [x_min, x_max] x [0, T]; both x edges are nodes.
struct SpaceTimeGrid {
    double x_min = -18.0;
    double x_max = 18.0;
    std::size_t nx = 1201;
    double T = 0.5;
    std::size_t nt = 1000;

    void validate() const {
        if (!(x_max > x_min)) throw InvalidArgument("empty x window");
        if (nx < 5) throw InvalidArgument("need at least 5 x nodes");
        if (!(T > 0.0) || nt < 1) throw InvalidArgument("need T > 0 and nt >= 1");
    }
    [[nodiscard]] double dx() const { return (x_max - x_min) / static_cast<double>(nx - 1); }
    [[nodiscard]] double dt() const { return T / static_cast<double>(nt); }
    [[nodiscard]] double x(std::size_t i) const { return x_min + static_cast<double>(i) * dx(); }
    [[nodiscard]] double t(std::size_t n) const { return static_cast<double>(n) * dt(); }
    [[nodiscard]] double length() const { return x_max - x_min; }
    friend bool operator==(const SpaceTimeGrid&, const SpaceTimeGrid&) = default;
};

/// Initial data: Gaussian exp(-x^2 / (2 s0)) or the smooth bump exp(-1 / (1 - (x/r)^2)).
struct Iota {
    enum class Kind { gaussian, bump };
    Kind kind = Kind::gaussian;
    double s0 = 1.0;
    double radius = 1.0;

    static Iota gaussian(double s0 = 1.0) {
        if (!(s0 > 0.0)) throw InvalidArgument("Gaussian width s0 must be positive");
        return {Kind::gaussian, s0, 1.0};
    }
    static Iota bump(double r = 1.0) {
        if (!(r > 0.0)) throw InvalidArgument("bump radius must be positive");
        return {Kind::bump, 1.0, r};
    }
    [[nodiscard]] double operator()(double x) const {
        if (kind == Kind::gaussian) return std::exp(-x * x / (2.0 * s0));
        const double u = x / radius;
        return std::abs(u) < 1.0 ? std::exp(-1.0 / (1.0 - u * u)) : 0.0;
    }
    [[nodiscard]] double sup() const { return kind == Kind::gaussian ? 1.0 : std::exp(-1.0); }
    /// Half-width outside of which the data is below 1e-10 of its maximum.
    [[nodiscard]] double support() const {
        return kind == Kind::gaussian ? std::sqrt(2.0 * s0 * 10.0 * std::numbers::ln10) : radius;
    }
};

/// Window half-width from the six-standard-deviation rule.
[[nodiscard]] inline double recommended_half_window(const Iota& iota, double lambda, double T) {
    return iota.support() + 6.0 * std::sqrt(2.0 * lambda * T);
}

/// Free-space heat solution from the Gaussian preset.
[[nodiscard]] inline double gaussian_heat(double a, double s0, double x, double t) {
    const double s = s0 + 2.0 * a * t;
    return std::sqrt(s0 / s) * std::exp(-x * x / (2.0 * s));
}

/// n-th x-derivative of gaussian_heat via probabilists' Hermite polynomials.
[[nodiscard]] inline double gaussian_heat_derivative(double a, double s0, double x, double t, int n) {
    const double s = s0 + 2.0 * a * t, u = x / std::sqrt(s);
    double h0 = 1.0, h1 = u;
    if (n == 0) h1 = h0;
    for (int k = 1; k < n; ++k) {
        const double h2 = u * h1 - k * h0;
        h0 = h1;
        h1 = h2;
    }
    const double sign = (n % 2 == 0) ? 1.0 : -1.0;
    return sign * std::pow(s, -0.5 * n) * h1 * gaussian_heat(a, s0, x, t);
}

/// Space-time array with x-derivatives computed spectrally on demand.
class MacroSolution {
public:
    MacroSolution() = default;
    MacroSolution(SpaceTimeGrid g, int max_order, std::string name = {})
        : grid_(g), max_order_(max_order), name_(std::move(name)), data_(g.nx * (g.nt + 1), 0.0) {
        g.validate();
    }

    [[nodiscard]] const SpaceTimeGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] int max_order() const noexcept { return max_order_; }
    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] std::span<const double> at(std::size_t n) const { return {data_.data() + n * grid_.nx, grid_.nx}; }
    [[nodiscard]] std::span<double> at(std::size_t n) { return {data_.data() + n * grid_.nx, grid_.nx}; }
    [[nodiscard]] double operator()(std::size_t n, std::size_t i) const { return data_[n * grid_.nx + i]; }

    /// d^order/dx^order of slice n: spectral on the periodic extension (the
    /// Dirichlet edges make the last node a copy of the first).
    [[nodiscard]] std::vector<double> derivative(int order, std::size_t n) const {
        if (order > max_order_)
            throw DerivativeOrderExceeded(name_ + ": derivative order " + std::to_string(order) + " exceeds cached " +
                                          std::to_string(max_order_));
        return periodic_derivative(at(n), order, grid_.length());
    }

    [[nodiscard]] double mass(std::size_t n) const {
        const auto u = at(n);
        CompensatedSum s;
        for (std::size_t i = 1; i + 1 < u.size(); ++i) s.add(u[i]);
        s.add(0.5 * (u.front() + u.back()));
        return s.value() * grid_.dx();
    }

    [[nodiscard]] double max_abs_all() const { return max_abs(data_); }

    /// Polynomial-decay invariant |u| <= C (1+|x|)^-4, with C fitted on the
    /// central half of the window and checked on the outer half.
    [[nodiscard]] bool decay_ok() const {
        const double half = 0.25 * grid_.length(), mid = 0.5 * (grid_.x_min + grid_.x_max);
        double C = 0.0;
        for (std::size_t n = 0; n <= grid_.nt; ++n)
            for (std::size_t i = 0; i < grid_.nx; ++i) {
                const double x = grid_.x(i);
                if (std::abs(x - mid) <= half) C = std::max(C, std::abs((*this)(n, i)) * std::pow(1.0 + std::abs(x), 4));
            }
        for (std::size_t n = 0; n <= grid_.nt; ++n)
            for (std::size_t i = 0; i < grid_.nx; ++i) {
                const double x = grid_.x(i);
                if (std::abs(x - mid) > half && std::abs((*this)(n, i)) * std::pow(1.0 + std::abs(x), 4) > C * (1 + 1e-9) + 1e-300)
                    return false;
            }
        return true;
    }

    static std::vector<double> periodic_derivative(std::span<const double> u, int order, double period) {
        const std::size_t n = u.size();
        std::vector<double> out(n);
        if (order == 0) {
            out.assign(u.begin(), u.end());
            return out;
        }
        fft::derivative(u.first(n - 1), std::span<double>(out).first(n - 1), period, order);
        out[n - 1] = out[0];
        return out;
    }

private:
    SpaceTimeGrid grid_;
    int max_order_ = 4;
    std::string name_;
    std::vector<double> data_;
};

/// Crank-Nicolson for u_t = a u_xx + S with homogeneous Dirichlet edges.
class HeatCN {
public:
    HeatCN(double a, const SpaceTimeGrid& g) : a_(a), g_(g) {
        if (!(a > 0.0)) throw InvalidArgument("diffusion coefficient must be positive");
        const double r = a * g.dt() / (g.dx() * g.dx());
        lo_ = -0.5 * r;
        diag_ = 1.0 + r;
        // Thomas factorization of the constant tridiagonal matrix.
        const std::size_t m = g.nx - 2;
        cp_.assign(m, 0.0);
        denom_.assign(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            denom_[i] = diag_ - (i == 0 ? 0.0 : lo_ * cp_[i - 1]);
            cp_[i] = lo_ / denom_[i];
        }
        r_ = r;
    }

    /// One step: u_new from u_old and the sources at both time levels.
    void step(std::span<const double> u_old, std::span<const double> s_old, std::span<const double> s_new,
              std::span<double> u_new) const {
        const std::size_t nx = g_.nx, m = nx - 2;
        const double dt = g_.dt();
        thread_local std::vector<double> d;
        d.resize(m);
        for (std::size_t i = 1; i + 1 < nx; ++i) {
            double rhs = u_old[i] + 0.5 * r_ * (u_old[i - 1] - 2.0 * u_old[i] + u_old[i + 1]);
            if (!s_old.empty()) rhs += 0.5 * dt * (s_old[i] + s_new[i]);
            d[i - 1] = rhs;
        }
        d[0] /= denom_[0];
        for (std::size_t i = 1; i < m; ++i) d[i] = (d[i] - lo_ * d[i - 1]) / denom_[i];
        for (std::size_t i = m - 1; i-- > 0;) d[i] -= cp_[i] * d[i + 1];
        u_new[0] = 0.0;
        u_new[nx - 1] = 0.0;
        for (std::size_t i = 0; i < m; ++i) u_new[i + 1] = d[i];
    }

    [[nodiscard]] double a() const noexcept { return a_; }

private:
    double a_;
    SpaceTimeGrid g_;
    double lo_ = 0.0, diag_ = 1.0, r_ = 0.0;
    std::vector<double> cp_, denom_;
};

/// Source at time level n written into out (length nx).
using SourceFn = std::function<void(std::size_t n, std::span<double> out)>;

/// Driven heat solve over the whole grid; src may be empty.
[[nodiscard]] inline MacroSolution solve_heat(double a, const SpaceTimeGrid& g, std::span<const double> init,
                                              const SourceFn& src, int max_order, std::string name) {
    MacroSolution sol(g, max_order, std::move(name));
    if (init.size() != g.nx) throw GridMismatch("initial slice size differs from grid");
    std::copy(init.begin(), init.end(), sol.at(0).begin());
    sol.at(0)[0] = 0.0;
    sol.at(0)[g.nx - 1] = 0.0;
    HeatCN cn(a, g);
    std::vector<double> s_old, s_new;
    if (src) {
        s_old.assign(g.nx, 0.0);
        s_new.assign(g.nx, 0.0);
        src(0, s_old);
    }
    for (std::size_t n = 0; n < g.nt; ++n) {
        if (src) src(n + 1, s_new);
        cn.step(sol.at(n), s_old, s_new, sol.at(n + 1));
        if (src) std::swap(s_old, s_new);
    }
    return sol;
}

namespace detail {

inline void check_window(const MacroSolution& u, double scale, const std::string& what) {
    const auto& g = u.grid();
    double edge = 0.0;
    for (std::size_t n = 0; n <= g.nt; ++n) edge = std::max({edge, std::abs(u(n, 1)), std::abs(u(n, g.nx - 2))});
    if (edge > 1e-10 * scale)
        throw WindowTooSmall(what + ": value " + std::to_string(edge) + " next to the window edge exceeds 1e-10 of " +
                             std::to_string(scale));
}

}  // namespace detail

/// u^0: the homogenized Cauchy problem.
[[nodiscard]] inline MacroSolution solve_u0(double a_eff, const Iota& iota, const SpaceTimeGrid& g,
                                            int max_order = 6) {
    if (!(a_eff > 0.0)) throw InvalidArgument("a_eff must be positive");
    g.validate();
    const double sup = iota.sup();
    if (std::max(std::abs(iota(g.x_min)), std::abs(iota(g.x_max))) > 1e-10 * sup)
        throw WindowTooSmall("initial data at the window edge exceeds 1e-10 of its maximum");
    std::vector<double> init(g.nx);
    for (std::size_t i = 0; i < g.nx; ++i) init[i] = iota(g.x(i));
    auto u = solve_heat(a_eff, g, init, {}, max_order, "u^0");
    detail::check_window(u, sup, "u^0");
    return u;
}

/// A source term coef * d_x^order of a solved macro function.
struct SourceTerm {
    double coef = 0.0;
    const MacroSolution* u = nullptr;
    int order = 2;
};

[[nodiscard]] inline SourceFn linear_source(std::vector<SourceTerm> terms) {
    std::erase_if(terms, [](const SourceTerm& t) { return t.coef == 0.0; });
    return [terms = std::move(terms)](std::size_t n, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (const auto& t : terms) {
            const auto d = t.u->derivative(t.order, n);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.coef * d[i];
        }
    };
}

/// Coefficients W[j][m] with w^j = sum_m W[j][m] d_xx u^m, from the C table.
/// Super regime: w^{k+1} = -sum_{m<=k} C_{k,m} u^m_xx - sum_{m=1}^{k} w^m.
/// Sub regime: w^1 = 0, w^{k+2} = -sum_{m<=k} C_{k,m} u^m_xx - sum_{m=1}^{k} w^{m+1}.
[[nodiscard]] inline std::vector<std::vector<double>> w_coefficients(Regime regime,
                                                                     const std::vector<std::vector<double>>& C,
                                                                     int depth) {
    const auto J = static_cast<std::size_t>(depth);
    std::vector<std::vector<double>> W(J + 1, std::vector<double>(J + 1, 0.0));
    const std::size_t shift = regime == Regime::super ? 1 : 2;
    for (std::size_t j = shift; j <= J; ++j) {
        const std::size_t k = j - shift;
        if (k >= C.size()) throw DepthInsufficient("C table has no row " + std::to_string(k) + " for w^" + std::to_string(j));
        for (std::size_t m = 0; m <= k; ++m) W[j][m] -= C[k][m];
        for (std::size_t i = shift; i < j; ++i)
            for (std::size_t m = 0; m <= J; ++m) W[j][m] -= W[i][m];
    }
    return W;
}

/// Constants driving the macro hierarchy.
struct MacroConstants {
    Regime regime = Regime::sub;
    double a_eff = 1.0;
    std::vector<double> a_k;   ///< a^{k,eff}, index k (entry 0 unused)
    std::vector<double> ua_k;  ///< underline a^{k,eff}, index k (entry 0 unused)
    std::vector<std::vector<double>> W;
    std::vector<double> I{1.0, 0.0};
};

/// Shifts the effective-constant lists (index k-1 holds superscript k) to
/// superscript indexing and derives W from the C table.
[[nodiscard]] inline MacroConstants make_macro_constants(const EffectiveConstants& ec,
                                                         const std::vector<std::vector<double>>& C, int w_depth,
                                                         std::vector<double> I = {1.0, 0.0}) {
    MacroConstants m;
    m.regime = ec.regime;
    m.a_eff = ec.a_eff;
    m.a_k.assign(1, 0.0);
    m.a_k.insert(m.a_k.end(), ec.a_k_eff.begin(), ec.a_k_eff.end());
    m.ua_k.assign(1, 0.0);
    m.ua_k.insert(m.ua_k.end(), ec.ua_k_eff.begin(), ec.ua_k_eff.end());
    m.W = w_coefficients(ec.regime, C, w_depth);
    m.I = std::move(I);
    return m;
}

/// u^0..u^J and v^0..v^J solved in dependency order on one grid.
class MacroHierarchy {
public:
    MacroHierarchy(MacroConstants c, Iota iota, SpaceTimeGrid g, int max_order = 6)
        : c_(std::move(c)), iota_(iota), g_(g), max_order_(max_order) {}

    [[nodiscard]] const SpaceTimeGrid& grid() const noexcept { return g_; }
    [[nodiscard]] const MacroConstants& constants() const noexcept { return c_; }
    [[nodiscard]] std::size_t solved_u() const noexcept { return u_.size(); }
    [[nodiscard]] std::size_t solved_v() const noexcept { return v_.size(); }

    const MacroSolution& solve_u(std::size_t j) {
        if (j < u_.size()) return u_[j];
        if (j > u_.size())
            throw ScheduleCycle("u^" + std::to_string(j) + " requested before u^" + std::to_string(u_.size()));
        if (j == 0) {
            u_.push_back(solve_u0(c_.a_eff, iota_, g_, max_order_));
            return u_.back();
        }
        // u^j needs w^j, which needs u^0..u^{j-1}; those are solved already.
        std::vector<SourceTerm> terms;
        for (std::size_t k = 1; k <= j; ++k) terms.push_back({coef(c_.a_k, k), &u_[j - k], 2});
        if (j < c_.W.size())
            for (std::size_t m = 0; m < j; ++m) terms.push_back({c_.W[j][m], &u_[m], 2});
        const std::vector<double> zero(g_.nx, 0.0);
        u_.push_back(solve_heat(c_.a_eff, g_, zero, linear_source(terms), max_order_, "u^" + std::to_string(j)));
        return u_.back();
    }

    /// v^0 = u^0; v^j_t = a_eff v^j_xx + sum_k ua^k d^{k+2} v^{j-k}, v^j(0) = I_j d^j u^0(0).
    const MacroSolution& solve_v(std::size_t j) {
        if (j < v_.size()) return v_[j];
        if (j > v_.size())
            throw ScheduleCycle("v^" + std::to_string(j) + " requested before v^" + std::to_string(v_.size()));
        if (j == 0) {
            v_.push_back(solve_u(0));
            return v_.back();
        }
        if (j >= c_.I.size()) throw MissingIngredient("initial-layer constant I_" + std::to_string(j) + " not available");
        std::vector<SourceTerm> terms;
        for (std::size_t k = 1; k <= j; ++k) {
            if (static_cast<int>(k) + 2 > max_order_ && coef(c_.ua_k, k) != 0.0)
                throw DerivativeOrderExceeded("v^" + std::to_string(j) + " needs d^" + std::to_string(k + 2) +
                                              " beyond cached order " + std::to_string(max_order_));
            terms.push_back({coef(c_.ua_k, k), &v_[j - k], static_cast<int>(k) + 2});
        }
        auto init = u_[0].derivative(static_cast<int>(j), 0);
        for (double& x : init) x *= c_.I[j];
        v_.push_back(solve_heat(c_.a_eff, g_, init, linear_source(terms), max_order_, "v^" + std::to_string(j)));
        return v_.back();
    }

    [[nodiscard]] const MacroSolution& u(std::size_t j) const {
        if (j >= u_.size()) throw MissingIngredient("u^" + std::to_string(j) + " has not been solved");
        return u_[j];
    }
    [[nodiscard]] const MacroSolution& v(std::size_t j) const {
        if (j >= v_.size()) throw MissingIngredient("v^" + std::to_string(j) + " has not been solved");
        return v_[j];
    }

    /// w~^j (the x-antiderivative of w^j) at time level n.
    [[nodiscard]] std::vector<double> w_tilde(std::size_t j, std::size_t n) const { return w_combo(j, n, 1); }
    /// w^j at time level n.
    [[nodiscard]] std::vector<double> w(std::size_t j, std::size_t n) const { return w_combo(j, n, 2); }

private:
    static double coef(const std::vector<double>& v, std::size_t k) { return k < v.size() ? v[k] : 0.0; }

    [[nodiscard]] std::vector<double> w_combo(std::size_t j, std::size_t n, int order) const {
        std::vector<double> out(g_.nx, 0.0);
        if (j >= c_.W.size()) throw MissingIngredient("w^" + std::to_string(j) + " beyond the C table");
        for (std::size_t m = 0; m < c_.W[j].size(); ++m) {
            if (c_.W[j][m] == 0.0) continue;
            const auto d = u(m).derivative(order, n);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += c_.W[j][m] * d[i];
        }
        return out;
    }

    MacroConstants c_;
    Iota iota_;
    SpaceTimeGrid g_;
    int max_order_;
    std::vector<MacroSolution> u_, v_;
};

/// Max over the grid of |Z^l + sum of w~| (the drift cancellation identity),
/// with Z^l = sum_n sum_{tau at power n} c_{l-n,tau} u^{m(tau)}_x.
[[nodiscard]] inline double z_identity_residual(const DriftTables& t, const MacroHierarchy& h, int l,
                                                std::size_t time_stride = 1) {
    const auto& g = h.grid();
    const Regime regime = h.constants().regime;
    double worst = 0.0;
    for (std::size_t n = 0; n <= g.nt; n += time_stride) {
        std::vector<double> Z(g.nx, 0.0);
        for (std::size_t tau = 0; tau < t.triple_power.size(); ++tau) {
            const int p = t.triple_power[tau];
            if (p > l) continue;
            const double c = t.c[static_cast<std::size_t>(l - p)][tau];
            if (c == 0.0) continue;
            const auto ux = h.u(static_cast<std::size_t>(t.triple_macro[tau])).derivative(1, n);
            for (std::size_t i = 0; i < g.nx; ++i) Z[i] += c * ux[i];
        }
        const std::size_t first = regime == Regime::super ? 1 : 2;
        for (std::size_t j = first; j <= static_cast<std::size_t>(l) + first; ++j) {
            const auto wt = h.w_tilde(j, n);
            for (std::size_t i = 0; i < g.nx; ++i) Z[i] += wt[i];
        }
        worst = std::max(worst, max_abs(Z));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Initial layer: averaged torus heat flows and the constants I_k.

struct FlowRecord {
    int k = 0;                    ///< B^k
    std::vector<double> time;     ///< sample times
    std::vector<double> norm;     ///< ||B^k(., s)||_{L2}
    double integral = 0.0;        ///< int_0^S <abar B^k_z> ds (trapezoid)
    double tail_bound = 0.0;      ///< analytic bound on the neglected tail
};

struct InitialLayer {
    std::vector<double> I{1.0, 0.0};
    std::vector<FlowRecord> flows;
};

struct InitialLayerOptions {
    double dt = 1e-4;
    double rel_stop = 1e-12;
    double max_time = 50.0;
};

namespace detail {

/// Dense pseudo-spectral operators on the torus for abar.
struct TorusOps {
    Eigen::MatrixXd D;     ///< spectral first derivative
    Eigen::VectorXd abar;  ///< nodal values
    Eigen::MatrixXd M;     ///< beta -> (abar beta_z)_z

    explicit TorusOps(const TorusField& ab) {
        const std::size_t n = ab.size();
        D.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        std::vector<double> e(n), col(n);
        for (std::size_t j = 0; j < n; ++j) {
            std::fill(e.begin(), e.end(), 0.0);
            e[j] = 1.0;
            fft::derivative(e, col, 1.0, 1);
            for (std::size_t i = 0; i < n; ++i) D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
        }
        abar = Eigen::Map<const Eigen::VectorXd>(ab.values().data(), static_cast<Eigen::Index>(n));
        M = D * abar.asDiagonal() * D;
    }
};

}  // namespace detail

/// I_0 = 1, I_1 = 0 and, for k = 2..K, I_k = -int_0^inf <abar B^k_z> ds where
/// B^k = sum_{l=1}^{k-1} beta^{k-l, l-1} collects averaged flows:
///   beta^{j,0}_t = (abar beta_z)_z, beta^{j,0}(0) = sum_{m=1}^{j} I_{j-m} chi^{m-1};
///   beta^{j,l}_t = (abar beta_z)_z + phi^{j,l}, zero initial data, with
///   phi^{j,1} = mu^{j,0} + (abar beta^{j,0})_z,
///   phi^{j,l} = mhat^{j,l-2} abar_z + mu^{j,l-1} + (abar beta^{j,l-1})_z  (l >= 2),
///   m^{j,0} = <abar beta^{j,0}_z>, m^{j,l} = <abar beta^{j,l}_z> + <(abar - a_eff)(mhat^{j,l-2} + beta^{j,l-1})>,
///   mu^{j,l} = abar beta^{j,l}_z - m^{j,l} + (abar - a_eff)(mhat^{j,l-2} + beta^{j,l-1}),
/// where terms with negative level are absent.
[[nodiscard]] inline InitialLayer initial_layer_constants(const CorrectorSet& cs, int K,
                                                          const InitialLayerOptions& opt = {}) {
    if (cs.regime != Regime::super) throw InvalidArgument("initial layer constants belong to the super regime");
    if (K < 1) throw InvalidArgument("initial layer depth must be >= 1");
    if (static_cast<int>(cs.chi.size()) < K - 1)
        throw MissingIngredient("initial layer to K = " + std::to_string(K) + " needs chi^0..chi^" + std::to_string(K - 2));
    if (!(opt.dt > 0.0)) throw InvalidArgument("initial layer time step must be positive");

    InitialLayer out;
    if (K < 2) return out;
    const detail::TorusOps ops(cs.abar);
    const auto n = static_cast<Eigen::Index>(cs.abar.size());
    const double dt = opt.dt, a_eff = cs.a_eff;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lhs(I - 0.5 * dt * ops.M);
    const Eigen::MatrixXd rhs = I + 0.5 * dt * ops.M;
    const Eigen::VectorXd abar_z = ops.D * ops.abar;
    auto zmean = [&](const Eigen::VectorXd& v) { return v.mean(); };
    // Slowest decay rate of the zero-mean flow is at least 4 pi^2 min(abar).
    const double rate = 4.0 * std::numbers::pi * std::numbers::pi * ops.abar.minCoeff();

    for (int k = 2; k <= K; ++k) {
        // Flows beta^{j,l} with j + l = k - 1, j >= 1: levels 0..k-2 for j = k-1-l.
        // Each chain j needs its levels 0..k-1-j; march chain j up to level L_j = k-1-j.
        struct Chain {
            int j, L;
            std::vector<Eigen::VectorXd> beta;  // per level
            std::vector<double> mhat;
            std::vector<double> m_prev;
        };
        std::vector<Chain> chains;
        for (int j = 1; j <= k - 1; ++j) {
            Chain c{j, k - 1 - j, {}, {}, {}};
            Eigen::VectorXd b0 = Eigen::VectorXd::Zero(n);
            for (int m = 1; m <= j; ++m) {
                const double Ijm = out.I[static_cast<std::size_t>(j - m)];
                const auto& chi = cs.chi[static_cast<std::size_t>(m - 1)];
                b0 += Ijm * Eigen::Map<const Eigen::VectorXd>(chi.values().data(), n);
            }
            b0.array() -= zmean(b0);
            c.beta.assign(static_cast<std::size_t>(c.L) + 1, Eigen::VectorXd::Zero(n));
            c.beta[0] = b0;
            c.mhat.assign(static_cast<std::size_t>(c.L) + 1, 0.0);
            c.m_prev.assign(static_cast<std::size_t>(c.L) + 1, 0.0);
            chains.push_back(std::move(c));
        }
        // Source phi^{j,l} and flux m^{j,l} from the current state of chain c.
        auto m_of = [&](const Chain& c, int l) {
            const auto& b = c.beta[static_cast<std::size_t>(l)];
            double m = ops.abar.dot(ops.D * b) / static_cast<double>(n);
            if (l >= 1) {
                Eigen::VectorXd extra = c.beta[static_cast<std::size_t>(l - 1)];
                if (l >= 2) extra.array() += c.mhat[static_cast<std::size_t>(l - 2)];
                m += ((ops.abar.array() - a_eff) * extra.array()).mean();
            }
            return m;
        };
        auto mu_of = [&](const Chain& c, int l) {
            const auto& b = c.beta[static_cast<std::size_t>(l)];
            Eigen::VectorXd mu = ops.abar.cwiseProduct(ops.D * b);
            mu.array() -= m_of(c, l);
            if (l >= 1) {
                Eigen::VectorXd extra = c.beta[static_cast<std::size_t>(l - 1)];
                if (l >= 2) extra.array() += c.mhat[static_cast<std::size_t>(l - 2)];
                mu.array() += (ops.abar.array() - a_eff) * extra.array();
            }
            return mu;
        };
        auto phi_of = [&](const Chain& c, int l) {
            Eigen::VectorXd phi = mu_of(c, l - 1) + ops.D * ops.abar.cwiseProduct(c.beta[static_cast<std::size_t>(l - 1)]);
            if (l >= 2) phi += c.mhat[static_cast<std::size_t>(l - 2)] * abar_z;
            return phi;
        };
        auto B_of = [&]() {
            Eigen::VectorXd B = Eigen::VectorXd::Zero(n);
            for (const auto& c : chains) B += c.beta[static_cast<std::size_t>(c.L)];
            return B;
        };
        auto flux = [&](const Eigen::VectorXd& B) { return ops.abar.dot(ops.D * B) / static_cast<double>(n); };

        FlowRecord rec;
        rec.k = k;
        Eigen::VectorXd B = B_of();
        const double norm0 = std::sqrt(B.squaredNorm() / static_cast<double>(n));
        double f_old = flux(B);
        rec.time.push_back(0.0);
        rec.norm.push_back(norm0);
        CompensatedSum integral;
        double s = 0.0, peak = norm0;
        if (norm0 == 0.0 && std::all_of(chains.begin(), chains.end(), [](const Chain& c) {
                return c.beta[0].squaredNorm() == 0.0;
            })) {
            out.I.push_back(0.0);
            out.flows.push_back(std::move(rec));
            continue;
        }
        std::vector<std::vector<Eigen::VectorXd>> phi_old(chains.size());
        for (std::size_t ci = 0; ci < chains.size(); ++ci)
            for (int l = 1; l <= chains[ci].L; ++l) phi_old[ci].push_back(phi_of(chains[ci], l));
        std::vector<std::vector<double>> mold(chains.size());
        for (std::size_t ci = 0; ci < chains.size(); ++ci)
            for (int l = 0; l <= chains[ci].L; ++l) mold[ci].push_back(m_of(chains[ci], l));

        double last_half_check = 0.0, norm_at_check = norm0;
        while (true) {
            for (std::size_t ci = 0; ci < chains.size(); ++ci) {
                auto& c = chains[ci];
                c.beta[0] = lhs.solve(rhs * c.beta[0]);
                for (int l = 1; l <= c.L; ++l) {
                    const auto lu = static_cast<std::size_t>(l);
                    const Eigen::VectorXd phi_new = phi_of(c, l);
                    c.beta[lu] = lhs.solve(rhs * c.beta[lu] + 0.5 * dt * (phi_old[ci][lu - 1] + phi_new));
                    phi_old[ci][lu - 1] = phi_new;
                }
                for (int l = 0; l <= c.L; ++l) {
                    const auto lu = static_cast<std::size_t>(l);
                    const double m_new = m_of(c, l);
                    c.mhat[lu] += 0.5 * dt * (mold[ci][lu] + m_new);
                    mold[ci][lu] = m_new;
                }
            }
            s += dt;
            B = B_of();
            const double f_new = flux(B);
            integral.add(0.5 * dt * (f_old + f_new));
            f_old = f_new;
            const double nb = std::sqrt(B.squaredNorm() / static_cast<double>(n));
            peak = std::max(peak, nb);
            rec.time.push_back(s);
            rec.norm.push_back(nb);
            if (nb <= opt.rel_stop * peak) break;
            // The flow norm must halve within a few predicted e-folding times.
            if (s - last_half_check >= 4.0 * std::numbers::ln2 / rate + 10 * dt) {
                if (norm_at_check > 0.0 && !(nb <= 0.5 * norm_at_check) && s > 1.0 / rate)
                    throw NoDecay("B^" + std::to_string(k) + " flow norm did not halve between s = " +
                                  std::to_string(last_half_check) + " and " + std::to_string(s));
                last_half_check = s;
                norm_at_check = nb;
            }
            if (s > opt.max_time) throw NoDecay("B^" + std::to_string(k) + " flow did not decay by max_time");
        }
        rec.integral = integral.value();
        // |<abar B_z>| <= max(abar) ||B_z||, and ||B_z|| decays at least like the norm.
        rec.tail_bound = ops.abar.maxCoeff() * std::sqrt((ops.D * B).squaredNorm() / static_cast<double>(n)) / rate;
        out.I.push_back(-rec.integral);
        out.flows.push_back(std::move(rec));
    }
    return out;
}

/// Least-squares slope and R^2 of log(norm) against time over samples with
/// norm above floor * norm[0].
struct DecayFit {
    double slope = 0.0, r2 = 0.0;
};

[[nodiscard]] inline DecayFit fit_log_decay(const FlowRecord& r, double floor = 1e-10) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < r.time.size(); ++i)
        if (r.norm[i] > floor * r.norm.front() && r.norm[i] > 0.0) {
            x.push_back(r.time[i]);
            y.push_back(std::log(r.norm[i]));
        }
    DecayFit f;
    const auto m = static_cast<double>(x.size());
    if (x.size() < 3) return f;
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    const double vx = sxx - sx * sx / m, vy = syy - sy * sy / m, cxy = sxy - sx * sy / m;
    f.slope = cxy / vx;
    f.r2 = vy > 0 ? cxy * cxy / (vx * vy) : 1.0;
    return f;
}

}  // namespace homoscale

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "homoscale/coefficient.hpp"
#include "homoscale/environment.hpp"
#include "homoscale/errors.hpp"
#include "homoscale/macro_pde.hpp"
#include "homoscale/quadrature.hpp"

namespace homoscale {

/// Exponents accepted by the expansion machinery: alpha > 0 outside (1.8, 2.2).
inline void check_alpha(double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw UnsupportedAlpha("alpha must be positive");
    if (alpha > 1.8 && alpha < 2.2)
        throw UnsupportedAlpha("alpha = " + std::to_string(alpha) +
                               " lies in (1.8, 2.2); the corrector depth J0 grows without bound near 2");
}

/// Integer refinement of a macro grid: rx fine cells per macro cell, rt fine
/// steps per macro step. Fine node rx*i coincides with macro node i.
struct FineGrid {
    SpaceTimeGrid macro;
    std::size_t rx = 1;
    std::size_t rt = 1;

    [[nodiscard]] std::size_t nx() const { return (macro.nx - 1) * rx + 1; }
    [[nodiscard]] std::size_t nt() const { return macro.nt * rt; }
    [[nodiscard]] double dx() const { return macro.dx() / static_cast<double>(rx); }
    [[nodiscard]] double dt() const { return macro.dt() / static_cast<double>(rt); }
    [[nodiscard]] double x(std::size_t i) const { return macro.x_min + static_cast<double>(i) * dx(); }
    [[nodiscard]] double t(std::size_t n) const { return static_cast<double>(n) * dt(); }
    [[nodiscard]] double T() const { return macro.T; }
    [[nodiscard]] SpaceTimeGrid as_grid() const { return {macro.x_min, macro.x_max, nx(), macro.T, nt()}; }
    [[nodiscard]] double node_steps() const { return static_cast<double>(nx()) * static_cast<double>(nt()); }
    friend bool operator==(const FineGrid&, const FineGrid&) = default;
};

struct ResolutionAdvice {
    double dx_max = 0.0;
    double dt_max = 0.0;
    FineGrid grid;
    double node_steps = 0.0;
};

/// Smallest integer refinement of `macro` meeting dx <= eps/16 and
/// dt <= min(eps^alpha/4 * dt_scaling, dx).
[[nodiscard]] inline ResolutionAdvice resolution_advice(double eps, double alpha, const SpaceTimeGrid& macro,
                                                        double budget = std::numeric_limits<double>::infinity(),
                                                        double dt_scaling = 1.0) {
    if (!(eps >= 0.02 && eps <= 0.5)) throw InvalidArgument("epsilon must lie in [0.02, 0.5]");
    check_alpha(alpha);
    macro.validate();
    ResolutionAdvice r;
    r.dx_max = eps / 16.0;
    r.grid.macro = macro;
    r.grid.rx = static_cast<std::size_t>(std::ceil(macro.dx() / r.dx_max - 1e-12));
    r.grid.rx = std::max<std::size_t>(r.grid.rx, 1);
    r.dt_max = std::min(std::pow(eps, alpha) / 4.0 * dt_scaling, r.grid.dx());
    r.grid.rt = static_cast<std::size_t>(std::ceil(macro.dt() / r.dt_max - 1e-12));
    r.grid.rt = std::max<std::size_t>(r.grid.rt, 1);
    r.node_steps = r.grid.node_steps();
    if (r.node_steps > budget)
        throw Unaffordable("eps = " + std::to_string(eps) + ", alpha = " + std::to_string(alpha) + " needs " +
                           std::to_string(r.node_steps) + " node-steps, budget is " + std::to_string(budget));
    return r;
}

struct EpsProblem {
    double eps = 0.1;
    double alpha = 1.0;
    Coefficient coef = Coefficient::product();
    PathSample path;  ///< environment path in its own time s = t / eps^alpha
    Iota iota;
    FineGrid grid;
    /// Leading steps taken as two implicit-Euler half steps (damps the
    /// unresolved fast modes that plain Crank-Nicolson would keep ringing).
    std::size_t startup_steps = 2;
    /// Gauss-Legendre points per cell for the harmonic face average.
    std::size_t face_points = 3;
    double dt_scaling = 1.0;
};

/// Environment time step making every fine half step a path node.
[[nodiscard]] inline double path_dt_for(const EpsProblem& p) {
    return p.grid.dt() / (2.0 * std::pow(p.eps, p.alpha));
}

[[nodiscard]] inline PathSample sample_problem_path(const DiffusionModel& model, const EpsProblem& p,
                                                    std::uint64_t seed) {
    return sample_path(model, path_dt_for(p), p.grid.T() / std::pow(p.eps, p.alpha), seed);
}

inline void check_resolution(const EpsProblem& p) {
    if (!(p.eps > 0.0)) throw InvalidArgument("epsilon must be positive");
    check_alpha(p.alpha);
    p.grid.macro.validate();
    const double dx = p.grid.dx(), dt = p.grid.dt();
    const double tol = 1.0 + 1e-12;
    if (dx > p.eps / 16.0 * tol)
        throw ResolutionViolation("dx = " + std::to_string(dx) + " exceeds eps/16 = " + std::to_string(p.eps / 16.0));
    const double dt_max = std::min(std::pow(p.eps, p.alpha) / 4.0 * p.dt_scaling, dx);
    if (dt > dt_max * tol)
        throw ResolutionViolation("dt = " + std::to_string(dt) + " exceeds " + std::to_string(dt_max));
    const double need = p.grid.T() / std::pow(p.eps, p.alpha);
    if (p.path.values.size() < 2 || p.path.horizon() < need * (1.0 - 1e-12))
        throw PathTooShort("path horizon " + std::to_string(p.path.horizon()) + " < T / eps^alpha = " +
                           std::to_string(need));
}

/// Streaming observer: called with the fine step index and the slice.
using SliceObserver = std::function<void(std::size_t n, std::span<const double> u)>;

struct EpsRun {
    std::vector<double> final_slice;
    double mass0 = 0.0;
    double max_mass_drift = 0.0;
    double max_abs = 0.0;
};

namespace detail {

/// Harmonic cell averages of a(x/eps, y) on the fine cells, with the z-parts
/// precomputed so each step only re-evaluates the y-parts.
class FaceCoefficient {
public:
    FaceCoefficient(const Coefficient& c, const FineGrid& g, double eps, std::size_t npts) {
        const quad::Rule* rule = nullptr;
        switch (npts) {
            case 1: rule = &quad::gauss_legendre<1>(); break;
            case 2: rule = &quad::gauss_legendre<2>(); break;
            case 3: rule = &quad::gauss_legendre<3>(); break;
            case 4: rule = &quad::gauss_legendre<4>(); break;
            default: throw InvalidArgument("face_points must be 1..4");
        }
        G_ = rule->x.size();
        for (double w : rule->w) w_.push_back(0.5 * w);
        nf_ = g.nx() - 1;
        const double dx = g.dx();
        std::vector<double> z(nf_ * G_);
        for (std::size_t f = 0; f < nf_; ++f)
            for (std::size_t q = 0; q < G_; ++q) z[f * G_ + q] = (g.x(f) + 0.5 * dx * (1.0 + rule->x[q])) / eps;
        base_ = c.base();
        fixed_.assign(nf_ * G_, 0.0);
        for (const auto& t : c.terms()) {
            if (t.z_free()) {
                y_only_.push_back(t);
                continue;
            }
            std::vector<double> zp(nf_ * G_);
            for (std::size_t k = 0; k < zp.size(); ++k) zp[k] = t.amp * t.z_part(z[k]);
            if (t.y_free()) {
                for (std::size_t k = 0; k < zp.size(); ++k) fixed_[k] += zp[k];
            } else {
                mixed_.push_back(t);
                zparts_.push_back(std::move(zp));
            }
        }
        constant_in_y_ = y_only_.empty() && mixed_.empty();
    }

    [[nodiscard]] bool constant_in_y() const { return constant_in_y_; }

    void evaluate(double y, std::span<double> out) const {
        double b = base_;
        for (const auto& t : y_only_) b += t.amp * t.y_part(y);
        std::vector<double> yp;
        for (const auto& t : mixed_) yp.push_back(t.y_part(y));
        for (std::size_t f = 0; f < nf_; ++f) {
            double inv = 0.0;
            for (std::size_t q = 0; q < G_; ++q) {
                const std::size_t k = f * G_ + q;
                double a = b + fixed_[k];
                for (std::size_t m = 0; m < mixed_.size(); ++m) a += yp[m] * zparts_[m][k];
                inv += w_[q] / a;
            }
            out[f] = 1.0 / inv;
        }
    }

private:
    std::size_t G_ = 0, nf_ = 0;
    std::vector<double> w_;
    double base_ = 0.0;
    std::vector<double> fixed_;
    std::vector<SeparableTerm> y_only_, mixed_;
    std::vector<std::vector<double>> zparts_;
    bool constant_in_y_ = false;
};

/// (I - theta dt A) u_new = (I + (1 - theta) dt A) u_old with the flux-form
/// A u_i = (af_i (u_{i+1} - u_i) - af_{i-1} (u_i - u_{i-1})) / dx^2, zero edges.
inline void theta_step(std::span<const double> af, double dt, double dx, double theta, std::span<const double> u_old,
                       std::span<double> u_new, std::vector<double>& cp, std::vector<double>& dp) {
    const std::size_t n = u_old.size();
    const double r = dt / (dx * dx);
    const double ri = theta * r, re = (1.0 - theta) * r;
    // Thomas sweep over interior nodes 1..n-2.
    double prev_c = 0.0, prev_d = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double al = af[i - 1], ar = af[i];
        double rhs = u_old[i];
        if (re != 0.0) rhs += re * (ar * (u_old[i + 1] - u_old[i]) - al * (u_old[i] - u_old[i - 1]));
        const double lo = -ri * al, di = 1.0 + ri * (al + ar), up = -ri * ar;
        const double m = di - lo * prev_c;
        prev_c = up / m;
        prev_d = (rhs - lo * prev_d) / m;
        cp[i] = prev_c;
        dp[i] = prev_d;
    }
    u_new[0] = 0.0;
    u_new[n - 1] = 0.0;
    double next = 0.0;
    for (std::size_t i = n - 2; i >= 1; --i) {
        next = dp[i] - cp[i] * next;
        u_new[i] = next;
    }
}

}  // namespace detail

/// Crank-Nicolson solve of u_t = (a(x/eps, xi(t/eps^alpha)) u_x)_x with the
/// coefficient frozen at each step's midpoint and harmonic cell averages on
/// the faces. The observer sees every slice n = 0..nt.
[[nodiscard]] inline EpsRun solve_eps(const EpsProblem& p, const SliceObserver& observe = {}) {
    check_resolution(p);
    const FineGrid& g = p.grid;
    const std::size_t nx = g.nx(), nt = g.nt();
    const double dx = g.dx(), dt = g.dt();
    const double scale = std::pow(p.eps, p.alpha);
    detail::FaceCoefficient face(p.coef, g, p.eps, p.face_points);

    std::vector<double> u(nx), w(nx), af(nx - 1), cp(nx), dp(nx);
    for (std::size_t i = 1; i + 1 < nx; ++i) u[i] = p.iota(g.x(i));
    EpsRun run;
    auto mass = [&](std::span<const double> v) {
        CompensatedSum s;
        for (double x : v) s.add(x);
        return s.value() * dx;
    };
    run.mass0 = mass(u);
    run.max_abs = max_abs(u);
    if (observe) observe(0, u);
    bool have_face = false;
    for (std::size_t n = 0; n < nt; ++n) {
        if (!have_face || !face.constant_in_y()) {
            face.evaluate(p.path.at((static_cast<double>(n) + 0.5) * dt / scale), af);
            have_face = true;
        }
        if (n < p.startup_steps) {
            detail::theta_step(af, 0.5 * dt, dx, 1.0, u, w, cp, dp);
            detail::theta_step(af, 0.5 * dt, dx, 1.0, w, u, cp, dp);
        } else {
            detail::theta_step(af, dt, dx, 0.5, u, w, cp, dp);
            std::swap(u, w);
        }
        run.max_mass_drift = std::max(run.max_mass_drift, std::abs(mass(u) - run.mass0));
        run.max_abs = std::max(run.max_abs, max_abs(u));
        if (observe) observe(n + 1, u);
    }
    run.final_slice = std::move(u);
    return run;
}

/// Full space-time field, keeping every `stride`-th fine slice (stride must
/// divide nt). Memory grows with nx * nt / stride; meant for small grids.
[[nodiscard]] inline MacroSolution solve_eps_field(const EpsProblem& p, std::size_t stride = 1) {
    const FineGrid& g = p.grid;
    if (stride == 0 || g.nt() % stride != 0) throw InvalidArgument("stride must divide the fine step count");
    SpaceTimeGrid sg{g.macro.x_min, g.macro.x_max, g.nx(), g.T(), g.nt() / stride};
    MacroSolution out(sg, 0, "u_eps");
    (void)solve_eps(p, [&](std::size_t n, std::span<const double> u) {
        if (n % stride == 0) std::copy(u.begin(), u.end(), out.at(n / stride).begin());
    });
    return out;
}

}  // namespace homoscale

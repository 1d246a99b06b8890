#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "homoscale/errors.hpp"
#include "homoscale/grid.hpp"
#include "homoscale/quadrature.hpp"
#include "homoscale/rng.hpp"

namespace homoscale {

struct OUParams {
    double theta = 1.0;
    double sigma0 = std::numbers::sqrt2;
};

struct CustomDynamics {
    std::function<double(double)> b;
    std::function<double(double)> sigma;
};

using Dynamics = std::variant<OUParams, CustomDynamics>;

struct YWindow {
    double half_width = 8.0;
    std::size_t points = 256;
};

/// Solution of L Q = g together with its exact-quadrature derivative Q'.
struct PoissonSolution {
    Profile Q;
    Profile dQ;
};

struct PoissonField {
    ZYField Q;
    ZYField dQ;
};

/// Relative centering tolerance for Poisson sources.
inline constexpr double kCenteringTol = 1e-8;

namespace detail {

inline double drift(const Dynamics& d, double y) {
    if (const auto* ou = std::get_if<OUParams>(&d)) return -ou->theta * y;
    return std::get<CustomDynamics>(d).b(y);
}
inline double diffusion(const Dynamics& d, double y) {
    if (const auto* ou = std::get_if<OUParams>(&d)) return ou->sigma0;
    return std::get<CustomDynamics>(d).sigma(y);
}

/// Unnormalized log invariant density log(q^{-1} exp(int_0^y 2b/q)),
/// closed form for OU, Gauss–Legendre composite otherwise.
class LogDensity {
public:
    explicit LogDensity(Dynamics d) : d_(std::move(d)) {}

    double operator()(double y) const {
        if (const auto* ou = std::get_if<OUParams>(&d_)) {
            const double v = ou->sigma0 * ou->sigma0 / (2.0 * ou->theta);
            return -y * y / (2.0 * v);
        }
        const auto& rule = quad::gauss_legendre<10>();
        const double seg = 0.125;
        const auto nseg = static_cast<std::size_t>(std::ceil(std::abs(y) / seg));
        double phi = 0.0;
        for (std::size_t s = 0; s < nseg; ++s) {
            const double a = y * static_cast<double>(s) / static_cast<double>(nseg);
            const double b = y * static_cast<double>(s + 1) / static_cast<double>(nseg);
            for (std::size_t g = 0; g < rule.x.size(); ++g) {
                const double x = 0.5 * (a + b) + 0.5 * (b - a) * rule.x[g];
                const double sg = diffusion(d_, x);
                phi += 0.5 * (b - a) * rule.w[g] * 2.0 * drift(d_, x) / (sg * sg);
            }
        }
        const double s0 = diffusion(d_, y);
        return phi - std::log(s0 * s0);
    }

private:
    Dynamics d_;
};

}  // namespace detail

/// The ergodic environment: generator data, invariant density on a
/// truncated y-window, and the integrating-factor Poisson solver.
class DiffusionModel {
public:
    /// Points per interpolation stencil of the Poisson quadrature (order kStencil).
    static constexpr std::size_t kStencil = 8;

    static DiffusionModel ou(double theta, double sigma0, YWindow w = {}) {
        if (!(theta > 0.0)) throw InvalidArgument("OU mean-reversion rate must be positive");
        if (!(sigma0 > 0.0)) throw InvalidArgument("OU noise amplitude must be positive");
        return DiffusionModel(OUParams{theta, sigma0}, w);
    }
    static DiffusionModel custom(std::function<double(double)> b, std::function<double(double)> sigma,
                                 YWindow w = {}) {
        return DiffusionModel(CustomDynamics{std::move(b), std::move(sigma)}, w);
    }

    [[nodiscard]] const Dynamics& dynamics() const noexcept { return s_->dyn; }
    [[nodiscard]] bool is_ou() const noexcept { return std::holds_alternative<OUParams>(s_->dyn); }
    [[nodiscard]] double b(double y) const { return detail::drift(s_->dyn, y); }
    [[nodiscard]] double sigma(double y) const { return detail::diffusion(s_->dyn, y); }
    [[nodiscard]] double q(double y) const {
        const double s = sigma(y);
        return s * s;
    }
    [[nodiscard]] const YGrid& y_grid() const noexcept { return s_->grid; }
    /// Normalized invariant density at the nodes.
    [[nodiscard]] const Profile& density() const noexcept { return s_->p; }
    [[nodiscard]] const Profile& b_nodes() const noexcept { return s_->b; }
    [[nodiscard]] const Profile& q_nodes() const noexcept { return s_->q; }
    [[nodiscard]] const Profile& sigma_nodes() const noexcept { return s_->sigma; }
    /// Normalized log-density at an arbitrary point.
    [[nodiscard]] double log_density(double y) const { return s_->logp(y) - s_->log_z; }

    /// Generator L f = q f''/2 + b f' on the nodes (fourth-order differences).
    [[nodiscard]] Profile generator(std::span<const double> f) const {
        const std::size_t n = f.size();
        Profile d1(n), d2(n), out(n);
        fd::d1(f, s_->grid.spacing(), d1);
        fd::d2(f, s_->grid.spacing(), d2);
        for (std::size_t i = 0; i < n; ++i) out[i] = 0.5 * s_->q[i] * d2[i] + s_->b[i] * d1[i];
        return out;
    }
    [[nodiscard]] ZYField generator(const ZYField& f) const {
        ZYField out(f.torus_grid(), f.y_grid());
        for (std::size_t i = 0; i < f.nz(); ++i) out.set_column(i, generator(f.column(i)));
        return out;
    }

    /// Centered check: |int g p| relative to int |g| p.
    [[nodiscard]] double centering_defect(std::span<const double> g) const {
        double m = 0.0, s = 0.0;
        const auto w = s_->grid.weights();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m += w[i] * g[i];
            s += w[i] * std::abs(g[i]);
        }
        return std::abs(m) / std::max(1.0, s);
    }

    /// Solves L Q = g with Q anchored to 0 at the window center.
    [[nodiscard]] PoissonSolution solve_poisson(std::span<const double> g) const {
        const auto& P = *s_;
        const std::size_t n = P.grid.size();
        if (g.size() != n) throw GridMismatch("Poisson source size differs from y grid");
        const double defect = centering_defect(g);
        if (defect > kCenteringTol)
            throw NotCentered("Poisson source has weighted mean defect " + std::to_string(defect));

        auto stencil_dot = [&](const std::array<double, kStencil>& w, std::size_t j0, std::span<const double> f) {
            double s = 0.0;
            for (std::size_t m = 0; m < kStencil; ++m) s += w[m] * f[j0 + m];
            return s;
        };
        // Scaled cumulative integrals: S_i = int_{-inf}^{y_i} g p / p_i, T_i = int_{y_i}^{inf} g p / p_i.
        Profile S(n), T(n);
        S[0] = 0.0;
        for (std::size_t m = 0; m < 4; ++m) S[0] += P.tail_left[m] * g[m];
        for (std::size_t i = 0; i + 1 < n; ++i)
            S[i + 1] = S[i] * P.ratio_up[i] + stencil_dot(P.wl[i], P.j0[i], g);
        T[n - 1] = 0.0;
        for (std::size_t m = 0; m < 4; ++m) T[n - 1] += P.tail_right[m] * g[n - 4 + m];
        for (std::size_t i = n - 1; i-- > 0;)
            T[i] = T[i + 1] * P.ratio_down[i] + stencil_dot(P.wr[i], P.j0[i], g);

        PoissonSolution sol{Profile(n), Profile(n)};
        for (std::size_t i = 0; i < n; ++i)
            sol.dQ[i] = (i < P.split) ? 2.0 / P.q[i] * S[i] : -2.0 / P.q[i] * T[i];

        const std::size_t c = n / 2;
        sol.Q[c] = 0.0;
        for (std::size_t i = c; i + 1 < n; ++i)
            sol.Q[i + 1] = sol.Q[i] + stencil_dot(P.wq[i], P.j0[i], sol.dQ);
        for (std::size_t i = c; i-- > 0;) sol.Q[i] = sol.Q[i + 1] - stencil_dot(P.wq[i], P.j0[i], sol.dQ);
        const double anchor = stencil_dot(P.center, P.center_j0, sol.Q);
        for (auto& v : sol.Q) v -= anchor;
        return sol;
    }

    /// Column-wise Poisson solves for a z-indexed family of sources.
    [[nodiscard]] PoissonField solve_poisson(const ZYField& g) const {
        PoissonField out{ZYField(g.torus_grid(), g.y_grid()), ZYField(g.torus_grid(), g.y_grid())};
        for (std::size_t i = 0; i < g.nz(); ++i) {
            PoissonSolution s;
            try {
                s = solve_poisson(g.column(i));
            } catch (const NotCentered& e) {
                throw NotCentered(std::string(e.what()) + " at z-node " + std::to_string(i));
            }
            out.Q.set_column(i, s.Q);
            out.dQ.set_column(i, s.dQ);
        }
        return out;
    }

    /// Lambda_g = int (Q')^2 q p.
    [[nodiscard]] double clt_variance(std::span<const double> g) const {
        const auto sol = solve_poisson(g);
        double s = 0.0;
        const auto w = s_->grid.weights();
        for (std::size_t i = 0; i < g.size(); ++i) s += w[i] * sol.dQ[i] * sol.dQ[i] * s_->q[i];
        return s;
    }

    /// Residual L Q - g on the nodes.
    [[nodiscard]] Profile poisson_residual(std::span<const double> Q, std::span<const double> g) const {
        auto r = generator(Q);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= g[i];
        return r;
    }

private:
    struct State {
        explicit State(const Dynamics& d) : dyn(d), logp(d) {}
        Dynamics dyn;
        detail::LogDensity logp;
        YGrid grid;
        double log_z = 0.0;
        Profile p, b, q, sigma;
        std::vector<std::size_t> j0;
        std::vector<std::array<double, kStencil>> wl, wr, wq;
        Profile ratio_up, ratio_down;
        std::array<double, 4> tail_left{}, tail_right{};
        std::array<double, kStencil> center{};
        std::size_t center_j0 = 0;
        std::size_t split = 0;
    };

    DiffusionModel(Dynamics dyn, YWindow w) {
        auto st = std::make_shared<State>(dyn);
        const auto nodes = YGrid::uniform_nodes(w.half_width, w.points);
        const std::size_t n = nodes.size();
        const double h = nodes[1] - nodes[0];

        Profile lp(n);
        double lp_max = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            st->b.push_back(detail::drift(dyn, nodes[i]));
            st->sigma.push_back(detail::diffusion(dyn, nodes[i]));
            st->q.push_back(st->sigma.back() * st->sigma.back());
            if (!(st->q.back() > 0.0) || !std::isfinite(st->q.back()))
                throw InvalidArgument("diffusion coefficient q must be positive on the y window");
            lp[i] = st->logp(nodes[i]);
            if (!std::isfinite(lp[i])) throw NonIntegrable("log-density is not finite on the window");
            lp_max = std::max(lp_max, lp[i]);
        }
        const double R = 0.5 * w.half_width;
        for (std::size_t i = 0; i < n; ++i)
            if (std::abs(nodes[i]) >= R && !(st->b[i] * nodes[i] < 0.0))
                throw InvalidArgument("drift is not recurrent (b(y) y >= 0) far out on the window");
        if (lp_max - std::max(lp.front(), lp.back()) < 18.0)
            throw NonIntegrable("invariant density does not decay across the y window");

        // Normalizing constant by Gauss–Legendre on every cell.
        const auto& gl = quad::gauss_legendre<8>();
        double z = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i)
            for (std::size_t g = 0; g < gl.x.size(); ++g) {
                const double s = nodes[i] + 0.5 * h * (1.0 + gl.x[g]);
                z += 0.5 * h * gl.w[g] * std::exp(st->logp(s) - lp_max);
            }
        if (!(z > 0.0) || !std::isfinite(z)) throw NonIntegrable("normalization integral diverges");
        st->log_z = lp_max + std::log(z);
        for (std::size_t i = 0; i < n; ++i) st->p.push_back(std::exp(lp[i] - st->log_z));
        st->grid = YGrid(w.half_width, n, st->p);

        // Interpolation stencils and cell functionals.
        st->j0.resize(n - 1);
        st->wl.resize(n - 1);
        st->wr.resize(n - 1);
        st->wq.resize(n - 1);
        st->ratio_up.resize(n - 1);
        st->ratio_down.resize(n - 1);
        std::array<double, kStencil> t{}, basis{};
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const std::size_t j0 = std::min<std::size_t>(i >= kStencil / 2 - 1 ? i - (kStencil / 2 - 1) : 0, n - kStencil);
            st->j0[i] = j0;
            for (std::size_t m = 0; m < kStencil; ++m) t[m] = static_cast<double>(j0 + m);
            st->wl[i].fill(0.0);
            st->wr[i].fill(0.0);
            st->wq[i].fill(0.0);
            for (std::size_t g = 0; g < gl.x.size(); ++g) {
                const double u = static_cast<double>(i) + 0.5 * (1.0 + gl.x[g]);
                const double s = nodes[0] + h * u;
                quad::lagrange_basis(t, u, basis);
                const double ls = st->logp(s);
                const double ww = 0.5 * h * gl.w[g];
                for (std::size_t m = 0; m < kStencil; ++m) {
                    st->wl[i][m] += ww * std::exp(ls - lp[i + 1]) * basis[m];
                    st->wr[i][m] += ww * std::exp(ls - lp[i]) * basis[m];
                    st->wq[i][m] += ww * basis[m];
                }
            }
            st->ratio_up[i] = std::exp(lp[i] - lp[i + 1]);
            st->ratio_down[i] = std::exp(lp[i + 1] - lp[i]);
        }

        // Tails beyond the window: cubic extrapolation of the source.
        auto tail = [&](bool left) {
            std::array<double, 4> out{};
            const double edge = left ? nodes.front() : nodes.back();
            const double ledge = left ? lp.front() : lp.back();
            const double dir = left ? -1.0 : 1.0;
            double L = 0.0;
            while (L < 400.0 * h && st->logp(edge + dir * L) - ledge > -45.0) L += h;
            const std::array<double, 4> tn = left ? std::array<double, 4>{0, 1, 2, 3}
                                                  : std::array<double, 4>{0, 1, 2, 3};
            std::array<double, 4> bb{};
            const auto nseg = static_cast<std::size_t>(std::max(1.0, std::ceil(L / h)));
            for (std::size_t sgi = 0; sgi < nseg; ++sgi)
                for (std::size_t g = 0; g < gl.x.size(); ++g) {
                    const double dist = L * (static_cast<double>(sgi) + 0.5 * (1.0 + gl.x[g])) /
                                        static_cast<double>(nseg);
                    const double s = edge + dir * dist;
                    // local coordinate: node index offset from the outermost node
                    const double u = left ? -dist / h : 3.0 + dist / h;
                    quad::lagrange_basis(tn, u, bb);
                    const double ww = 0.5 * L / static_cast<double>(nseg) * gl.w[g] *
                                      std::exp(st->logp(s) - ledge);
                    for (std::size_t m = 0; m < 4; ++m) out[m] += ww * bb[m];
                }
            return out;
        };
        st->tail_left = tail(true);
        st->tail_right = tail(false);

        // Anchor functional: Lagrange interpolation at the window center.
        st->center_j0 = n / 2 - kStencil / 2;
        for (std::size_t m = 0; m < kStencil; ++m) t[m] = static_cast<double>(st->center_j0 + m);
        quad::lagrange_basis(t, (0.0 - nodes[0]) / h, basis);
        st->center = basis;

        // Switch from left to right cumulative integrals at the median of p.
        double cum = 0.0;
        st->split = n;
        for (std::size_t i = 0; i < n; ++i) {
            cum += st->grid.weights()[i];
            if (cum >= 0.5) {
                st->split = i;
                break;
            }
        }
        s_ = std::move(st);
    }

    std::shared_ptr<const State> s_;
};

// ---------------------------------------------------------------- paths ---

struct PathSample {
    double dt = 0.0;
    std::vector<double> values;
    std::uint64_t seed = 0;

    [[nodiscard]] double horizon() const noexcept {
        return dt * static_cast<double>(values.empty() ? 0 : values.size() - 1);
    }
    /// Linear interpolation in time.
    [[nodiscard]] double at(double t) const {
        const double u = t / dt;
        const auto k = static_cast<std::size_t>(std::floor(u));
        if (k + 1 >= values.size()) {
            if (k + 1 == values.size() && std::abs(u - static_cast<double>(k)) < 1e-9) return values.back();
            throw PathTooShort("path of horizon " + std::to_string(horizon()) + " queried at " +
                               std::to_string(t));
        }
        const double f = u - static_cast<double>(k);
        return (1.0 - f) * values[k] + f * values[k + 1];
    }
};

namespace detail {

inline std::size_t path_steps(double dt, double T_path) {
    if (!(dt > 0.0) || !(T_path >= 0.0)) throw InvalidArgument("path needs dt > 0 and T >= 0");
    return static_cast<std::size_t>(std::ceil(T_path / dt - 1e-9));
}

inline void advance_path(const Dynamics& dyn, double dt, std::size_t steps, Rng& rng,
                         std::vector<double>& v) {
    if (const auto* ou = std::get_if<OUParams>(&dyn)) {
        const double decay = std::exp(-ou->theta * dt);
        const double sd = ou->theta > 0.0
                              ? std::sqrt(ou->sigma0 * ou->sigma0 / (2.0 * ou->theta) * (1.0 - decay * decay))
                              : ou->sigma0 * std::sqrt(dt);
        for (std::size_t k = 0; k < steps; ++k) v.push_back(v.back() * decay + sd * rng.normal());
        return;
    }
    const auto& c = std::get<CustomDynamics>(dyn);
    const double h = dt / 8.0;
    const double sh = std::sqrt(h);
    for (std::size_t k = 0; k < steps; ++k) {
        double x = v.back();
        for (int s = 0; s < 8; ++s) x += c.b(x) * h + c.sigma(x) * sh * rng.normal();
        v.push_back(x);
    }
}

}  // namespace detail

/// Path started at a fixed point (exact OU transitions, Euler–Maruyama otherwise).
inline PathSample sample_path_from(const Dynamics& dyn, double xi0, double dt, double T_path,
                                   std::uint64_t seed) {
    const std::size_t steps = detail::path_steps(dt, T_path);
    Rng rng(seed);
    PathSample out{dt, {}, seed};
    out.values.reserve(steps + 1);
    out.values.push_back(xi0);
    detail::advance_path(dyn, dt, steps, rng, out.values);
    return out;
}

/// Stationary path: the start is drawn from the invariant law.
inline PathSample sample_path(const DiffusionModel& model, double dt, double T_path, std::uint64_t seed) {
    const std::size_t steps = detail::path_steps(dt, T_path);
    Rng rng(seed);
    double xi0 = 0.0;
    if (const auto* ou = std::get_if<OUParams>(&model.dynamics())) {
        xi0 = std::sqrt(ou->sigma0 * ou->sigma0 / (2.0 * ou->theta)) * rng.normal();
    } else {
        const auto& g = model.y_grid();
        const double u = rng.uniform();
        double cum = 0.0;
        xi0 = g.nodes().back();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double next = cum + g.weights()[i];
            if (u <= next) {
                const double f = g.weights()[i] > 0 ? (u - cum) / g.weights()[i] : 0.5;
                xi0 = g.node(i) + (f - 0.5) * g.spacing();
                break;
            }
            cum = next;
        }
    }
    PathSample out{dt, {}, seed};
    out.values.reserve(steps + 1);
    out.values.push_back(xi0);
    detail::advance_path(model.dynamics(), dt, steps, rng, out.values);
    return out;
}

}  // namespace homoscale

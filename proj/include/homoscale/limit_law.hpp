#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "homoscale/environment.hpp"
#include "homoscale/errors.hpp"
#include "homoscale/expansion.hpp"
#include "homoscale/macro_pde.hpp"
#include "homoscale/rng.hpp"
#include "homoscale/stats.hpp"

namespace homoscale {

/// dq = a_eff q_xx dt + sqrt(lambda) u^0_xx dW, q(0) = 0.
struct LimitSPDE {
    double a_eff = 1.0;
    double lambda = 0.0;
    const MacroSolution* u0 = nullptr;
};

namespace detail {

/// h(s) = int_s^T <u^0_xx(t), phi> dt on the time nodes. The heat kernel
/// carries u^0_xx(s) to u^0_xx(t), so the spatial convolution drops out.
inline std::vector<double> response_kernel(const LimitSPDE& s, const std::function<double(double)>& phi) {
    if (!s.u0) throw MissingIngredient("limit law needs u^0");
    const auto& g = s.u0->grid();
    std::vector<double> ph(g.nx), gt(g.nt + 1);
    for (std::size_t i = 0; i < g.nx; ++i) ph[i] = phi(g.x(i));
    for (std::size_t n = 0; n <= g.nt; ++n) {
        const auto d = s.u0->derivative(2, n);
        std::vector<double> p(g.nx);
        for (std::size_t i = 0; i < g.nx; ++i) p[i] = d[i] * ph[i];
        gt[n] = quad::trapezoid(p, g.dx());
    }
    std::vector<double> h(g.nt + 1, 0.0);
    for (std::size_t n = g.nt; n-- > 0;) h[n] = h[n + 1] + 0.5 * g.dt() * (gt[n] + gt[n + 1]);
    return h;
}

}  // namespace detail

/// Cov(<q0, phi1>, <q0, phi2>) = lambda int_0^T h1(s) h2(s) ds.
[[nodiscard]] inline double q0_covariance(const LimitSPDE& s, const std::function<double(double)>& p1,
                                          const std::function<double(double)>& p2) {
    if (!(s.lambda >= 0.0)) throw InvalidArgument("lambda must be nonnegative");
    if (s.lambda == 0.0) return 0.0;
    const auto h1 = detail::response_kernel(s, p1);
    const auto h2 = detail::response_kernel(s, p2);
    std::vector<double> p(h1.size());
    for (std::size_t n = 0; n < p.size(); ++n) p[n] = h1[n] * h2[n];
    return s.lambda * quad::trapezoid(p, s.u0->grid().dt());
}

[[nodiscard]] inline double q0_variance(const LimitSPDE& s, const std::function<double(double)>& phi) {
    return q0_covariance(s, phi, phi);
}

/// Closed-form reference for Gaussian data exp(-x^2/(2 s0)) and Gaussian phi:
/// <u^0_xx(t), phi> is explicit and the two time integrals use Gauss-Kronrod.
[[nodiscard]] inline double q0_variance_gaussian(double a_eff, double lambda, double s0, double T,
                                                 const TestFunction& phi) {
    if (phi.kind != TestFunction::Kind::gaussian) throw InvalidArgument("closed form needs a Gaussian phi");
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    const double c = phi.center, w = phi.width;
    auto g = [&](double t) {
        const double s = s0 + 2.0 * a_eff * t, S = s + w;
        const double pre = std::sqrt(s0 / s) * std::sqrt(2.0 * std::numbers::pi * s * w / S);
        return pre * std::exp(-c * c / (2.0 * S)) * (c * c / (S * S) - 1.0 / S);
    };
    auto h = [&](double sv) { return GK::integrate(g, sv, T, 10, 1e-13); };
    return lambda * GK::integrate([&](double sv) { const double v = h(sv); return v * v; }, 0.0, T, 10, 1e-12);
}

/// One path of the limit SPDE on u^0's grid: a half Crank-Nicolson step, the
/// noise increment sqrt(lambda) u^0_xx(t_{n+1/2}) dW, another half step.
class Q0Sampler {
public:
    explicit Q0Sampler(const LimitSPDE& s) : s_(s) {
        if (!s.u0) throw MissingIngredient("limit law needs u^0");
        const auto& g = s.u0->grid();
        half_ = g;
        half_.nt = 2 * g.nt;
        cn_.emplace(s.a_eff, half_);
        mid_.resize(g.nt);
        auto prev = s.u0->derivative(2, 0);
        for (std::size_t n = 0; n < g.nt; ++n) {
            auto next = s.u0->derivative(2, n + 1);
            mid_[n].resize(g.nx);
            for (std::size_t i = 0; i < g.nx; ++i) mid_[n][i] = 0.5 * (prev[i] + next[i]);
            prev = std::move(next);
        }
    }

    [[nodiscard]] MacroSolution sample(std::uint64_t seed) const {
        const auto& g = s_.u0->grid();
        MacroSolution q(g, 0, "q0");
        if (s_.lambda == 0.0) return q;
        Rng rng(seed);
        const double amp = std::sqrt(s_.lambda * g.dt());
        std::vector<double> a(g.nx), b(g.nx);
        for (std::size_t n = 0; n < g.nt; ++n) {
            cn_->step(q.at(n), {}, {}, a);
            const double z = amp * rng.normal();
            for (std::size_t i = 1; i + 1 < g.nx; ++i) a[i] += z * mid_[n][i];
            cn_->step(a, {}, {}, q.at(n + 1));
        }
        return q;
    }

private:
    LimitSPDE s_;
    SpaceTimeGrid half_;
    std::optional<HeatCN> cn_;
    std::vector<std::vector<double>> mid_;
};

[[nodiscard]] inline MacroSolution sample_q0(const LimitSPDE& s, std::uint64_t seed) { return Q0Sampler(s).sample(seed); }

struct VarianceEstimate {
    std::size_t n = 0;
    double mean = 0.0;
    double variance = 0.0;
    stats::Interval ci;  ///< 95% chi-square interval for the variance
};

struct InvarianceOptions {
    double env_dt = 0.02;  ///< environment-time trapezoid step
    std::uint64_t seed = 1;
};

/// Samples of A(t) = eps^{alpha/2} int_0^{t/eps^alpha} g(xi_s) ds at each t
/// in `times` (ascending), one stationary path per sample. Row = path.
[[nodiscard]] inline std::vector<std::vector<double>> invariance_samples(const DiffusionModel& model,
                                                                         const std::function<double(double)>& g,
                                                                         double eps, double alpha,
                                                                         const std::vector<double>& times,
                                                                         std::size_t n_paths,
                                                                         const InvarianceOptions& opt = {}) {
    if (times.empty() || !std::is_sorted(times.begin(), times.end()) || !(times.front() > 0.0))
        throw InvalidArgument("times must be positive and ascending");
    if (!(eps > 0.0) || !(alpha > 0.0)) throw InvalidArgument("eps and alpha must be positive");
    {
        const auto& yg = model.y_grid();
        Profile gp(yg.size());
        double mx = 0.0;
        for (std::size_t j = 0; j < yg.size(); ++j) {
            gp[j] = g(yg.node(j));
            mx = std::max(mx, std::abs(gp[j]));
        }
        const double m = y_average(yg, gp);
        if (std::abs(m) > kCenteringTol * std::max(1.0, mx))
            throw NotCentered("invariance profile has mean " + std::to_string(m));
    }
    const double scale = std::pow(eps, alpha), pre = std::pow(eps, alpha / 2.0);
    const double horizon = times.back() / scale;
    std::vector<std::vector<double>> out(n_paths, std::vector<double>(times.size()));
    for (std::size_t p = 0; p < n_paths; ++p) {
        const auto path = sample_path(model, opt.env_dt, horizon, task_seed(opt.seed, 7, p));
        double acc = 0.0, prev = g(path.values[0]);
        std::size_t next = 0;
        for (std::size_t k = 1; k < path.values.size() && next < times.size(); ++k) {
            const double cur = g(path.values[k]);
            const double s0 = static_cast<double>(k - 1) * opt.env_dt, s1 = s0 + opt.env_dt;
            while (next < times.size() && times[next] / scale <= s1 + 1e-12) {
                // Partial trapezoid up to the requested time.
                const double f = (times[next] / scale - s0) / opt.env_dt;
                const double mid = prev + f * (cur - prev);
                out[p][next] = pre * (acc + 0.5 * f * opt.env_dt * (prev + mid));
                ++next;
            }
            acc += 0.5 * opt.env_dt * (prev + cur);
            prev = cur;
        }
        for (; next < times.size(); ++next) out[p][next] = pre * acc;
    }
    return out;
}

[[nodiscard]] inline VarianceEstimate invariance_variance(const DiffusionModel& model,
                                                          const std::function<double(double)>& g, double eps,
                                                          double alpha, double t, std::size_t n_paths,
                                                          const InvarianceOptions& opt = {}) {
    const auto rows = invariance_samples(model, g, eps, alpha, {t}, n_paths, opt);
    std::vector<double> x;
    for (const auto& r : rows) x.push_back(r[0]);
    const auto s = stats::summarize(x);
    VarianceEstimate v{s.n, s.mean, s.variance, {}};
    if (s.n >= 2) v.ci = stats::variance_ci(s);
    return v;
}

}  // namespace homoscale

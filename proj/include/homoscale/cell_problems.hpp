#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "homoscale/coefficient.hpp"
#include "homoscale/environment.hpp"
#include "homoscale/errors.hpp"
#include "homoscale/grid.hpp"

namespace homoscale {

enum class Regime { sub, super };

inline const char* to_string(Regime r) { return r == Regime::sub ? "sub" : "super"; }

// ------------------------------------------------------- cell operators ---

/// Zero-mean periodic v with (a v')' = f.
[[nodiscard]] inline TorusField solve_cell(const TorusField& a, const TorusField& f) {
    const double m = z_mean(f);
    if (std::abs(m) > kZeroMeanTol * std::max(1.0, max_abs(f)))
        throw Incompatible("cell source has mean " + std::to_string(m));
    for (double v : a.values())
        if (!(v > 0.0)) throw InvalidArgument("cell coefficient must be positive");
    const TorusField F = z_antiderivative(f - m);
    const TorusField inv = 1.0 / a;
    const double c = -z_mean(F * inv) / z_mean(inv);
    return z_antiderivative(remove_mean((F + c) * inv));
}

[[nodiscard]] inline ZYField solve_cell(const ZYField& a, const ZYField& f) {
    ZYField out(a.torus_grid(), a.y_grid());
    for (std::size_t j = 0; j < a.ny(); ++j) {
        try {
            out.set_row(j, solve_cell(a.row(j), f.row(j)));
        } catch (const Incompatible& e) {
            throw Incompatible(std::string(e.what()) + " at y-node " + std::to_string(j));
        }
    }
    return out;
}

/// (a v_z)_z
[[nodiscard]] inline TorusField flux_div(const TorusField& a, const TorusField& v) {
    return z_derivative(a * z_derivative(v));
}
[[nodiscard]] inline ZYField flux_div(const ZYField& a, const ZYField& v) {
    return z_derivative(a * z_derivative(v));
}
[[nodiscard]] inline ZYField flux_div(const ZYField& a, const TorusField& v) {
    return z_derivative(a * z_derivative(v));
}

// ----------------------------------------------------------- correctors ---

struct CascadeOptions {
    int max_depth = 4;
    /// c_1, c_2, ... of the higher chi equations (missing entries are 0).
    std::vector<double> c_constants;
};

/// Regime-tagged corrector collection. Sub regime fills chi_sub; super
/// regime fills everything else. Index k of each list is the superscript,
/// except eta/zeta/h which start at superscript 1 (entry 0 unused, zero).
struct CorrectorSet {
    Regime regime = Regime::sub;
    int depth = 0;
    TorusField abar{TorusGrid(8)};
    double a_eff = 0.0;

    std::vector<ZYField> chi_sub;

    std::vector<TorusField> chi;
    std::vector<ZYField> f;
    std::vector<ZYField> kappa, kappa_y;
    std::vector<TorusField> tau;
    std::vector<ZYField> gamma, gamma_y;
    std::vector<ZYField> g, h;
    std::vector<TorusField> eta;
    std::vector<ZYField> zeta, zeta_y;
    std::vector<double> c_constants;
    bool c_override = false;
};

namespace detail {

inline TorusField harmonic_corrector(const TorusField& abar) { return solve_cell(abar, -z_derivative(abar)); }

inline double harmonic_mean(const TorusField& a) { return 1.0 / z_mean(1.0 / a); }

inline ZYField super_f(const ZYField& a, double a_eff, const TorusField* chi_prev, const TorusField& chi_k) {
    ZYField out = a * z_derivative(chi_k) + z_derivative(a * chi_k);
    if (chi_prev)
        out += (a - a_eff) * *chi_prev;
    else
        out += a - a_eff;
    return out;
}

inline ZYField kappa0_source(const ZYField& a, const TorusField& abar, const TorusField& chi0) {
    const ZYField d = a - abar;
    return z_derivative(d) + z_derivative(d * z_derivative(chi0));
}

/// (A - Abar) v for z-only v, plus centered (A w - overline(A w)) when w given.
inline ZYField centered_flux(const ZYField& a, const TorusField& abar, const TorusField& v) {
    return z_derivative((a - abar) * z_derivative(v));
}
inline ZYField fluctuation(const ZYField& F) { return F - y_average(F); }

inline TorusField chi_next_rhs(const ZYField& fk, const std::vector<TorusField>& chi, int k,
                               const std::vector<double>& c) {
    const TorusField fb = y_average(fk);
    TorusField rhs = -(fb - z_mean(fb));
    for (int j = 1; j <= k - 1; ++j) {
        const std::size_t idx = static_cast<std::size_t>(k - j) - 1;
        if (idx < c.size() && c[idx] != 0.0) rhs += c[idx] * chi[static_cast<std::size_t>(j - 1)];
    }
    return rhs;
}

/// Column-wise L-Poisson solve. When the source has zero z-mean the solution
/// is shifted to exact zero z-mean; otherwise the z-mean profile is dictated
/// by the source (L commutes with the z-average) and is left in place.
inline void poisson_into(const DiffusionModel& model, const ZYField& src, std::vector<ZYField>& Q,
                         std::vector<ZYField>& Qy) {
    auto sol = model.solve_poisson(src);
    if (max_abs(z_mean(src)) <= kZeroMeanTol * std::max(1.0, max_abs(src))) {
        const auto m = z_mean(sol.Q);
        for (std::size_t j = 0; j < sol.Q.ny(); ++j)
            for (std::size_t i = 0; i < sol.Q.nz(); ++i) sol.Q.at(i, j) -= m[j];
    }
    Q.push_back(std::move(sol.Q));
    Qy.push_back(std::move(sol.dQ));
}

inline void check_depth(int K, int cap) {
    if (K > cap)
        throw CascadeDepthExceeded("depth " + std::to_string(K) + " exceeds configured maximum " +
                                   std::to_string(cap));
}

}  // namespace detail

/// chi^0 ... chi^J for alpha < 2: per-y cell problems driven by L_y.
[[nodiscard]] inline CorrectorSet build_sub_cascade(const CoefficientField& cf, const DiffusionModel& model,
                                                    int J, const CascadeOptions& opt = {}) {
    if (J < 0) throw InvalidArgument("sub cascade depth must be >= 0");
    detail::check_depth(J, opt.max_depth);
    const ZYField& a = cf.a;
    CorrectorSet cs;
    cs.regime = Regime::sub;
    cs.depth = J;
    cs.abar = y_average(a);
    cs.chi_sub.push_back(solve_cell(a, -z_derivative(a)));
    for (int j = 1; j <= J; ++j) {
        const ZYField Ly = model.generator(cs.chi_sub.back());
        cs.chi_sub.push_back(solve_cell(a, remove_z_mean(-Ly)));
    }
    cs.a_eff = zy_mean(a * (1.0 + z_derivative(cs.chi_sub[0])));
    return cs;
}

/// Full alpha > 2 hierarchy to depth K: chi up to K+1, kappa up to K,
/// tau/gamma/g up to K-1, h/eta/zeta from 1 to K-1.
[[nodiscard]] inline CorrectorSet build_super_cascade(const CoefficientField& cf, const DiffusionModel& model,
                                                      int K, const CascadeOptions& opt = {}) {
    if (K < 1) throw InvalidArgument("super cascade depth must be >= 1");
    detail::check_depth(K, opt.max_depth);
    const ZYField& a = cf.a;
    const TorusGrid tg = a.torus_grid();
    CorrectorSet cs;
    cs.regime = Regime::super;
    cs.depth = K;
    cs.c_constants = opt.c_constants;
    cs.c_override = std::any_of(opt.c_constants.begin(), opt.c_constants.end(), [](double c) { return c != 0; });
    cs.abar = y_average(a);
    cs.a_eff = detail::harmonic_mean(cs.abar);

    cs.chi.push_back(detail::harmonic_corrector(cs.abar));
    for (int k = 0; k <= K; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        cs.f.push_back(detail::super_f(a, cs.a_eff, k == 0 ? nullptr : &cs.chi[ku - 1], cs.chi[ku]));
        cs.chi.push_back(solve_cell(cs.abar, detail::chi_next_rhs(cs.f[ku], cs.chi, k, opt.c_constants)));
    }

    detail::poisson_into(model, detail::kappa0_source(a, cs.abar, cs.chi[0]), cs.kappa, cs.kappa_y);
    for (int k = 0; k + 1 <= K; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const ZYField src = detail::centered_flux(a, cs.abar, cs.chi[ku + 1]) + detail::fluctuation(cs.f[ku]);
        detail::poisson_into(model, src, cs.kappa, cs.kappa_y);
    }

    // tau^k, gamma^k
    for (int k = 0; k <= K - 1; ++k) {
        const ZYField& prev = k == 0 ? cs.kappa[0] : cs.gamma.back();
        const ZYField Aprev = flux_div(a, prev);
        cs.tau.push_back(solve_cell(cs.abar, remove_mean(-y_average(Aprev))));
        const ZYField src = detail::centered_flux(a, cs.abar, cs.tau.back()) + detail::fluctuation(Aprev);
        detail::poisson_into(model, src, cs.gamma, cs.gamma_y);
    }

    // g^0 = a(kappa^0+tau^0)_z + (a(kappa^0+tau^0))_z; g^k, h^k for k >= 1.
    {
        const ZYField s = cs.kappa[0] + cs.tau[0];
        cs.g.push_back(a * z_derivative(s) + z_derivative(a * s));
        cs.h.push_back(ZYField(tg, a.y_grid()));
    }
    for (int k = 1; k <= K - 1; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const ZYField s = cs.gamma[ku - 1] + cs.tau[ku];
        cs.g.push_back(a * z_derivative(s));
        cs.h.push_back(z_derivative(a * s));
    }

    // eta^k, zeta^k for k = 1 .. K-1
    cs.eta.push_back(TorusField(tg));
    cs.zeta.push_back(ZYField(tg, a.y_grid()));
    cs.zeta_y.push_back(ZYField(tg, a.y_grid()));
    for (int k = 1; k <= K - 1; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const ZYField& prev = k == 1 ? cs.kappa[1] : cs.zeta[ku - 1];
        const ZYField Aprev = flux_div(a, prev);
        const TorusField gb = y_average(cs.g[ku - 1]);
        TorusField rhs = -y_average(Aprev) - (gb - z_mean(gb));
        ZYField src = detail::fluctuation(Aprev) + detail::fluctuation(cs.g[ku - 1]);
        if (k >= 2) {
            rhs -= y_average(cs.h[ku - 1]);
            src += detail::fluctuation(cs.h[ku - 1]);
        }
        cs.eta.push_back(solve_cell(cs.abar, remove_mean(rhs)));
        src += detail::centered_flux(a, cs.abar, cs.eta.back());
        detail::poisson_into(model, src, cs.zeta, cs.zeta_y);
    }
    return cs;
}

// ------------------------------------------------------------ constants ---

struct EffectiveConstants {
    Regime regime = Regime::sub;
    double a_eff = 0.0;
    std::vector<double> a_k_eff;   ///< index k-1 holds a^{k,eff}
    std::vector<double> ua_k_eff;  ///< index k-1 holds the underlined constant (super only)
    double lambda_total = 0.0;
    std::vector<double> lambda_k;     ///< sub only
    std::vector<Profile> mean_a_k;    ///< sub only: <a>^k(y), centered
    std::vector<double> divergence_defect;  ///< sub only: double average of (a chi^k)_z
    double lambda_q = 0.0, lambda_sigma = 0.0;  ///< super only: both variants
    double solvability_f0 = 0.0;                ///< super only
    double harmonic_bound = 0.0, arithmetic_bound = 0.0;
};

struct LambdaSuper {
    double v_q = 0.0;
    double v_sigma = 0.0;
    [[nodiscard]] double operative() const { return v_sigma; }
};

/// Both readings of the super-diffusive variance: q inside or outside the square.
[[nodiscard]] inline LambdaSuper lambda_super(const CorrectorSet& cs, const DiffusionModel& model) {
    if (cs.regime != Regime::super || cs.kappa_y.empty()) throw MissingIngredient("lambda_super needs kappa^0");
    const ZYField prod = cs.kappa_y[0] * cs.chi[0];
    const Profile m = z_mean(prod);
    const auto& q = model.q_nodes();
    Profile a(m.size()), b(m.size());
    for (std::size_t j = 0; j < m.size(); ++j) {
        a[j] = (m[j] * q[j]) * (m[j] * q[j]);
        b[j] = m[j] * m[j] * q[j];
    }
    return {y_average(model.y_grid(), a), y_average(model.y_grid(), b)};
}

[[nodiscard]] inline EffectiveConstants effective_constants(const CorrectorSet& cs, const CoefficientField& cf,
                                                            const DiffusionModel& model) {
    const ZYField& a = cf.a;
    const YGrid& yg = a.y_grid();
    EffectiveConstants ec;
    ec.regime = cs.regime;
    ec.harmonic_bound = 1.0 / zy_mean(1.0 / a);
    ec.arithmetic_bound = zy_mean(a);
    if (cs.regime == Regime::sub) {
        const ZYField a0 = a * (1.0 + z_derivative(cs.chi_sub[0]));
        ec.a_eff = zy_mean(a0);
        Profile m0 = z_mean(a0);
        for (double& v : m0) v -= ec.a_eff;
        ec.mean_a_k.push_back(std::move(m0));
        for (std::size_t k = 1; k < cs.chi_sub.size(); ++k) {
            const ZYField grad = a * z_derivative(cs.chi_sub[k]);
            const ZYField div = z_derivative(a * cs.chi_sub[k]);
            const double ak = zy_mean(grad) + zy_mean(div);
            ec.a_k_eff.push_back(ak);
            ec.divergence_defect.push_back(std::abs(zy_mean(div)));
            Profile mk = z_mean(grad + div);
            for (double& v : mk) v -= ak;
            ec.mean_a_k.push_back(std::move(mk));
        }
        for (const auto& m : ec.mean_a_k) ec.lambda_k.push_back(model.clt_variance(m));
        ec.lambda_total = ec.lambda_k.front();
        return ec;
    }
    ec.a_eff = z_mean(cs.abar * (1.0 + z_derivative(cs.chi[0])));
    ec.solvability_f0 = z_mean(y_average(cs.f[0]));
    for (std::size_t k = 1; k < cs.f.size(); ++k) ec.ua_k_eff.push_back(z_mean(y_average(cs.f[k])));
    ec.a_k_eff.push_back(z_mean(y_average(cs.g[0])));
    for (int k = 2; k <= cs.depth; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const ZYField s = cs.gamma[ku - 2] + cs.tau[ku - 1];
        ec.a_k_eff.push_back(zy_mean(a * z_derivative(s)));
    }
    const auto ls = lambda_super(cs, model);
    ec.lambda_q = ls.v_q;
    ec.lambda_sigma = ls.v_sigma;
    ec.lambda_total = ls.operative();
    (void)yg;
    return ec;
}

// ------------------------------------------------------------- audits ---

struct Residual {
    std::string equation;
    double value = 0.0;
    double tolerance = 0.0;
    [[nodiscard]] bool ok() const { return std::isfinite(value) && value < tolerance; }
};

namespace detail {

/// Relative Poisson residual |L Q - src| / max(1, |src|) over the inner half
/// of the window, with L applied by eighth-order centered differences so the
/// check is not limited by the accuracy of the solver's own stencils.
inline double poisson_residual_norm(const DiffusionModel& model, const ZYField& Q, const ZYField& src) {
    const YGrid& yg = Q.y_grid();
    const std::size_t n = yg.size();
    const auto& q = model.q_nodes();
    const auto& b = model.b_nodes();
    Profile col(n), d1(n), d2(n);
    double r = 0.0, scale = 1.0;
    for (std::size_t i = 0; i < Q.nz(); ++i) {
        for (std::size_t j = 0; j < n; ++j) col[j] = Q.at(i, j);
        fd::d1_interior8(col, yg.spacing(), d1);
        fd::d2_interior8(col, yg.spacing(), d2);
        for (std::size_t j = 4; j + 4 < n; ++j) {
            if (std::abs(yg.node(j)) > 0.5 * yg.half_width()) continue;
            const double lq = 0.5 * q[j] * d2[j] + b[j] * d1[j];
            r = std::max(r, std::abs(lq - src.at(i, j)));
            scale = std::max(scale, std::abs(src.at(i, j)));
        }
    }
    return r / scale;
}

inline double max_z_mean(const ZYField& f) { return max_abs(z_mean(f)); }

}  // namespace detail

[[nodiscard]] inline std::vector<Residual> audit_residuals(const CorrectorSet& cs, const CoefficientField& cf,
                                                           const DiffusionModel& model, double tol = 1e-6) {
    const ZYField& a = cf.a;
    std::vector<Residual> out;
    auto add = [&](std::string name, double v) { out.push_back({std::move(name), v, tol}); };
    auto idx = [](const char* base, std::size_t k) { return std::string(base) + "^" + std::to_string(k); };

    if (cs.regime == Regime::sub) {
        add("chi^0 cell: (a(1+chi0_z))_z = 0", max_abs(z_derivative(a * (1.0 + z_derivative(cs.chi_sub[0])))));
        for (std::size_t j = 1; j < cs.chi_sub.size(); ++j)
            add(idx("chi", j) + " cell: (a chi_z)_z + L_y chi^{j-1} = 0",
                max_abs(flux_div(a, cs.chi_sub[j]) + model.generator(cs.chi_sub[j - 1])));
        for (std::size_t j = 0; j < cs.chi_sub.size(); ++j)
            add(idx("chi", j) + " zero z-mean", detail::max_z_mean(cs.chi_sub[j]));
        return out;
    }

    const TorusField& ab = cs.abar;
    add("chi^0 cell: (abar chi0_z)_z + abar_z = 0", max_abs(flux_div(ab, cs.chi[0]) + z_derivative(ab)));
    for (std::size_t k = 0; k + 1 < cs.chi.size(); ++k)
        add(idx("chi", k + 1) + " cell: Abar chi = -(fbar - <fbar>) + c-terms",
            max_abs(flux_div(ab, cs.chi[k + 1]) -
                    detail::chi_next_rhs(cs.f[k], cs.chi, static_cast<int>(k), cs.c_constants)));
    add("solvability <fbar^0> = 0", std::abs(z_mean(y_average(cs.f[0]))));
    add("kappa^0 poisson", detail::poisson_residual_norm(model, cs.kappa[0], detail::kappa0_source(a, ab, cs.chi[0])));
    for (std::size_t k = 1; k < cs.kappa.size(); ++k)
        add(idx("kappa", k) + " poisson",
            detail::poisson_residual_norm(model, cs.kappa[k],
                                          detail::centered_flux(a, ab, cs.chi[k]) + detail::fluctuation(cs.f[k - 1])));
    for (std::size_t k = 0; k < cs.tau.size(); ++k) {
        const ZYField Aprev = flux_div(a, k == 0 ? cs.kappa[0] : cs.gamma[k - 1]);
        const TorusField rhs = -y_average(Aprev);
        add(idx("tau", k) + " cell", max_abs(flux_div(ab, cs.tau[k]) - rhs) / std::max(1.0, max_abs(rhs)));
        add(idx("gamma", k) + " poisson",
            detail::poisson_residual_norm(model, cs.gamma[k],
                                          detail::centered_flux(a, ab, cs.tau[k]) + detail::fluctuation(Aprev)));
    }
    for (std::size_t k = 1; k < cs.eta.size(); ++k) {
        const ZYField Aprev = flux_div(a, k == 1 ? cs.kappa[1] : cs.zeta[k - 1]);
        const TorusField gb = y_average(cs.g[k - 1]);
        TorusField rhs = -y_average(Aprev) - (gb - z_mean(gb));
        ZYField src = detail::fluctuation(Aprev) + detail::fluctuation(cs.g[k - 1]) +
                      detail::centered_flux(a, ab, cs.eta[k]);
        if (k >= 2) {
            rhs -= y_average(cs.h[k - 1]);
            src += detail::fluctuation(cs.h[k - 1]);
        }
        add(idx("eta", k) + " cell", max_abs(flux_div(ab, cs.eta[k]) - rhs) / std::max(1.0, max_abs(rhs)));
        add(idx("zeta", k) + " poisson", detail::poisson_residual_norm(model, cs.zeta[k], src));
    }
    // Relative to the field size: tau^k, eta^k, gamma^k grow like (2 pi)^{2k}.
    double zm = 0.0;
    auto rel = [](double m, double size) { return m / std::max(1.0, size); };
    for (const auto& c : cs.chi) zm = std::max(zm, rel(std::abs(z_mean(c)), max_abs(c)));
    for (const auto& c : cs.tau) zm = std::max(zm, rel(std::abs(z_mean(c)), max_abs(c)));
    for (std::size_t k = 1; k < cs.eta.size(); ++k) zm = std::max(zm, rel(std::abs(z_mean(cs.eta[k])), max_abs(cs.eta[k])));
    zm = std::max(zm, rel(detail::max_z_mean(cs.kappa[0]), max_abs(cs.kappa[0])));
    for (const auto& c : cs.gamma) zm = std::max(zm, rel(detail::max_z_mean(c), max_abs(c)));
    // kappa^{k>=1} and zeta^k inherit a y-dependent z-mean from f^k and g^k;
    // check that it is exactly the Poisson solution of the averaged source.
    for (std::size_t k = 1; k < cs.kappa.size(); ++k) {
        const Profile src = z_mean(detail::centered_flux(a, ab, cs.chi[k]) + detail::fluctuation(cs.f[k - 1]));
        const Profile m = z_mean(cs.kappa[k]);
        const auto sol = model.solve_poisson(src);
        double d = 0.0;
        for (std::size_t j = 0; j < m.size(); ++j) d = std::max(d, std::abs(m[j] - sol.Q[j]));
        add(idx("kappa", k) + " z-mean profile", d / std::max(1.0, max_abs(sol.Q)));
    }
    out.push_back({"zero z-mean of chi, tau, eta, kappa^0, gamma", zm, 1e-10});
    return out;
}

}  // namespace homoscale

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "homoscale/cell_problems.hpp"
#include "homoscale/environment.hpp"
#include "homoscale/grid.hpp"

namespace homoscale {

/// One martingale term: eps-power index n (exponent n*delta), Upsilon with its
/// zero-mean z-antiderivative, and the index m of the macro factor u^m_x.
struct MartingaleTriple {
    int power = 0;
    int macro = 0;
    ZYField upsilon;
    ZYField upsilon_tilde;
    std::string label;
};

struct DriftCorrectors {
    std::vector<TorusField> P;
    std::vector<ZYField> Q, Q_y;
};

/// Leading super-regime wiring: kappa^0_y (default) or kappa^1_y.
enum class LeadingWiring { kappa0, kappa1 };

namespace detail {

inline ZYField abar_minus(const ZYField& a, const TorusField& abar) { return -(a - abar); }
inline ZYField fluctuation_neg(const ZYField& F) { return -(F - y_average(F)); }

/// Two-thirds band limit in z. The chain takes repeated second z-derivatives of
/// products, so rounding in the top modes would otherwise grow level by level.
inline ZYField band(const ZYField& f) { return z_lowpass(f, f.nz() / 3); }

inline MartingaleTriple make_triple(int power, int macro, ZYField ups, std::string label) {
    ups = remove_z_mean(std::move(ups));
    ZYField tilde = z_antiderivative(ups);
    return {power, macro, std::move(ups), std::move(tilde), std::move(label)};
}

}  // namespace detail

/// Martingale terms grouped by total eps-power, powers 0 .. max_power.
/// Sub regime: (d_y chi^j, u^m) at power j+m, with j, m <= max_index (defaults
/// to max_power). Super regime: the y-derivatives of
/// sum_i gamma^{n-1-i} u^i_x + kappa^0 u^n_x at power n.
[[nodiscard]] inline std::vector<MartingaleTriple> assemble_triples(const CorrectorSet& cs, int max_power,
                                                                    LeadingWiring wiring = LeadingWiring::kappa0,
                                                                    int max_index = -1) {
    if (max_power < 0) throw InvalidArgument("max_power must be >= 0");
    if (max_index < 0) max_index = max_power;
    std::vector<MartingaleTriple> out;
    if (cs.regime == Regime::sub) {
        const int jmax = std::min(max_power, max_index);
        if (static_cast<int>(cs.chi_sub.size()) < jmax + 1)
            throw DepthInsufficient("sub triples to power " + std::to_string(max_power) + " need chi^0..chi^" +
                                    std::to_string(jmax));
        std::vector<ZYField> dy;
        for (int j = 0; j <= jmax; ++j) dy.push_back(y_derivative(cs.chi_sub[static_cast<std::size_t>(j)]));
        for (int n = 0; n <= max_power; ++n)
            for (int j = std::max(0, n - max_index); j <= std::min(n, jmax); ++j)
                out.push_back(detail::make_triple(n, n - j, dy[static_cast<std::size_t>(j)],
                                                  "d_y chi^" + std::to_string(j) + " * u^" + std::to_string(n - j) + "_x"));
        return out;
    }
    if (static_cast<int>(cs.gamma_y.size()) < max_power || cs.kappa_y.size() < 2)
        throw DepthInsufficient("super triples to power " + std::to_string(max_power) + " need gamma^0..gamma^" +
                                std::to_string(max_power - 1));
    const ZYField& lead = wiring == LeadingWiring::kappa0 ? cs.kappa_y[0] : cs.kappa_y[1];
    const std::string lead_name = wiring == LeadingWiring::kappa0 ? "kappa^0" : "kappa^1";
    out.push_back(detail::make_triple(0, 0, lead, "d_y " + lead_name + " * u^0_x"));
    for (int n = 1; n <= max_power; ++n) {
        for (int i = 0; i < n; ++i)
            out.push_back(detail::make_triple(n, i, cs.gamma_y[static_cast<std::size_t>(n - 1 - i)],
                                              "d_y gamma^" + std::to_string(n - 1 - i) + " * u^" + std::to_string(i) +
                                                  "_x"));
        out.push_back(detail::make_triple(n, n, cs.kappa_y[0], "d_y kappa^0 * u^" + std::to_string(n) + "_x"));
    }
    return out;
}

/// P^0 = a_eff / abar, Q^0 from ((abar - a) P^0)_zz, then the recursion to K.
[[nodiscard]] inline DriftCorrectors build_PQ(const CoefficientField& cf, const TorusField& abar,
                                              const DiffusionModel& model, int K) {
    if (K < 0) throw InvalidArgument("P/Q depth must be >= 0");
    const ZYField& a = cf.a;
    DriftCorrectors d;
    const TorusField inv = 1.0 / abar;
    d.P.push_back(inv * (1.0 / z_mean(inv)));
    auto push_Q = [&](const ZYField& src) {
        auto sol = model.solve_poisson(detail::band(src));
        d.Q.push_back(detail::band(remove_z_mean(std::move(sol.Q))));
        d.Q_y.push_back(detail::band(sol.dQ));
    };
    push_Q(z_derivative(detail::abar_minus(a, abar) * d.P[0], 2));
    for (int k = 1; k <= K; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const ZYField Qa_zz = z_derivative(d.Q[ku - 1] * a, 2);
        const TorusField R = -y_average(Qa_zz);
        const TorusField G = z_antiderivative(z_antiderivative(remove_mean(R)));
        const double c2 = (1.0 - z_mean(G * inv)) / z_mean(inv);
        d.P.push_back((G + c2) * inv);
        push_Q(z_derivative(detail::abar_minus(a, abar) * d.P.back(), 2) + detail::fluctuation_neg(Qa_zz));
    }
    return d;
}

/// c_{k,tau} = overline(<Q^k_y Upsilon~_tau> sigma) for every k <= K and triple.
struct DriftTables {
    std::vector<std::vector<double>> c;  ///< c[k][tau]
    std::vector<std::vector<double>> C;  ///< C[l][m], 0 <= m <= l
    std::vector<int> triple_power, triple_macro;
};

namespace detail {

inline Profile sigma_weighted_pairing(const ZYField& Qy, const ZYField& ut, const DiffusionModel& model) {
    Profile m = z_mean(Qy * ut);
    const auto& s = model.sigma_nodes();
    for (std::size_t j = 0; j < m.size(); ++j) m[j] *= s[j];
    return m;
}

}  // namespace detail

[[nodiscard]] inline DriftTables drift_constants(const DiffusionModel& model, const DriftCorrectors& pq,
                                                 const std::vector<MartingaleTriple>& triples) {
    DriftTables t;
    const int K = static_cast<int>(pq.Q_y.size()) - 1;
    for (const auto& tr : triples) {
        t.triple_power.push_back(tr.power);
        t.triple_macro.push_back(tr.macro);
    }
    for (int k = 0; k <= K; ++k) {
        std::vector<double> row;
        for (const auto& tr : triples)
            row.push_back(y_average(model.y_grid(),
                                    detail::sigma_weighted_pairing(pq.Q_y[static_cast<std::size_t>(k)],
                                                                   tr.upsilon_tilde, model)));
        t.c.push_back(std::move(row));
    }
    // C_{l,m} = sum over triples with macro m and power n <= l of c_{l-n}.
    for (int l = 0; l <= K; ++l) {
        std::vector<double> row(static_cast<std::size_t>(l) + 1, 0.0);
        for (std::size_t i = 0; i < triples.size(); ++i) {
            const int n = triples[i].power, m = triples[i].macro;
            if (n <= l && m <= l) row[static_cast<std::size_t>(m)] += t.c[static_cast<std::size_t>(l - n)][i];
        }
        t.C.push_back(std::move(row));
    }
    return t;
}

/// U_{k,tau}(y): L U = 2 (c_{k,tau} - <Q^k_y Upsilon~_tau>(y) sigma(y)); the
/// macro factor u^m_x multiplies it symbolically.
struct UTable {
    std::vector<std::vector<Profile>> U;  ///< U[k][tau]
    std::vector<std::vector<Profile>> source;
};

[[nodiscard]] inline UTable build_U(const DiffusionModel& model, const DriftCorrectors& pq,
                                    const std::vector<MartingaleTriple>& triples) {
    UTable u;
    for (std::size_t k = 0; k < pq.Q_y.size(); ++k) {
        std::vector<Profile> row, srow;
        for (const auto& tr : triples) {
            Profile m = detail::sigma_weighted_pairing(pq.Q_y[k], tr.upsilon_tilde, model);
            const double xi = y_average(model.y_grid(), m);
            for (double& v : m) v = 2.0 * (xi - v);
            row.push_back(model.solve_poisson(m).Q);
            srow.push_back(std::move(m));
        }
        u.U.push_back(std::move(row));
        u.source.push_back(std::move(srow));
    }
    return u;
}

[[nodiscard]] inline std::vector<Residual> audit_drift(const CoefficientField& cf, const TorusField& abar,
                                                       double a_eff, const DiffusionModel& model,
                                                       const DriftCorrectors& pq, const UTable* U = nullptr,
                                                       double tol = 1e-6) {
    const ZYField& a = cf.a;
    std::vector<Residual> out;
    auto idx = [](const char* b, std::size_t k) { return std::string(b) + "^" + std::to_string(k); };
    // P^0 abar equals the harmonic mean of abar; in the super regime that is a_eff.
    const double h = 1.0 / z_mean(1.0 / abar);
    out.push_back({"P^0 abar = harmonic mean of abar", max_abs(pq.P[0] * abar - h), 1e-9});
    if (std::abs(h - a_eff) <= 1e-9 * h)
        out.push_back({"P^0 abar = a_eff", max_abs(pq.P[0] * abar - a_eff), 1e-9});
    out.push_back({"P^0 ode (abar P^0)_zz = 0", max_abs(z_derivative(abar * pq.P[0], 2)), tol});
    for (std::size_t k = 0; k < pq.P.size(); ++k) {
        out.push_back({idx("P", k) + " mean one", std::abs(z_mean(pq.P[k]) - 1.0), 1e-10});
        out.push_back({idx("Q", k) + " zero z-mean", max_abs(z_mean(pq.Q[k])) / std::max(1.0, max_abs(pq.Q[k])), 1e-12});
    }
    out.push_back({"Q^0 poisson", detail::poisson_residual_norm(model, pq.Q[0],
                                                                  detail::band(z_derivative(detail::abar_minus(a, abar) * pq.P[0], 2))),
                   tol});
    for (std::size_t k = 1; k < pq.P.size(); ++k) {
        const ZYField Qa_zz = z_derivative(pq.Q[k - 1] * a, 2);
        out.push_back({idx("P", k) + " ode",
                       max_abs(z_derivative(abar * pq.P[k], 2) + y_average(Qa_zz)) /
                           std::max(1.0, max_abs(y_average(Qa_zz))),
                       tol});
        out.push_back({idx("Q", k) + " poisson",
                       detail::poisson_residual_norm(
                           model, pq.Q[k],
                           detail::band(z_derivative(detail::abar_minus(a, abar) * pq.P[k], 2) + detail::fluctuation_neg(Qa_zz))),
                       tol});
    }
    if (U) {
        const YGrid& yg = model.y_grid();
        double worst = 0.0;
        for (std::size_t k = 0; k < U->U.size(); ++k)
            for (std::size_t t = 0; t < U->U[k].size(); ++t) {
                const ZYField Qf = ZYField::from_y(TorusGrid(8), yg, U->U[k][t]);
                const ZYField Sf = ZYField::from_y(TorusGrid(8), yg, U->source[k][t]);
                worst = std::max(worst, detail::poisson_residual_norm(model, Qf, Sf));
            }
        out.push_back({"U^{k,l} poisson (all)", worst, tol});
    }
    return out;
}

}  // namespace homoscale

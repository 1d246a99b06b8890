#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "homoscale/cell_problems.hpp"
#include "homoscale/drift_chain.hpp"
#include "homoscale/expansion.hpp"
#include "homoscale/limit_law.hpp"
#include "homoscale/macro_pde.hpp"
#include "homoscale/oscillatory.hpp"
#include "homoscale/rng.hpp"
#include "homoscale/stats.hpp"

namespace homoscale {

/// Runs f(i) for i < n on up to `threads` workers. Results must be written by
/// index, so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

// ------------------------------------------------------------------ setup ---

struct SetupOptions {
    std::size_t nz = 64;
    int sub_depth = 3;
    int super_depth = 4;
    int pq_depth = 3;
    int triple_power = 3;
    int initial_layer_depth = 1;  ///< I_0..I_K; K >= 2 runs the torus flows
    LeadingWiring wiring = LeadingWiring::kappa0;
    InitialLayerOptions layer;
};

/// Everything deterministic for one coefficient, environment and regime.
struct Setup {
    DiffusionModel model;
    Coefficient coef;
    CoefficientField cf;
    Regime regime = Regime::sub;
    CorrectorSet cs;
    EffectiveConstants ec;
    DriftCorrectors pq;
    std::vector<MartingaleTriple> triples;
    DriftTables tables;
    InitialLayer layer;
};

[[nodiscard]] inline std::unique_ptr<Setup> build_setup(const DiffusionModel& model, const Coefficient& coef,
                                                        Regime regime, const SetupOptions& o = {}) {
    auto s = std::unique_ptr<Setup>(new Setup{model, coef, sample(coef, TorusGrid(o.nz), model.y_grid()), regime,
                                              {}, {}, {}, {}, {}, {}});
    s->cs = regime == Regime::sub ? build_sub_cascade(s->cf, model, o.sub_depth)
                                  : build_super_cascade(s->cf, model, o.super_depth);
    s->ec = effective_constants(s->cs, s->cf, model);
    s->pq = build_PQ(s->cf, s->cs.abar, model, o.pq_depth);
    s->triples = assemble_triples(s->cs, o.triple_power, o.wiring);
    s->tables = drift_constants(model, s->pq, s->triples);
    if (regime == Regime::super && o.initial_layer_depth >= 2)
        s->layer = initial_layer_constants(s->cs, o.initial_layer_depth, o.layer);
    return s;
}

/// Solves u^0..u^J0 and v^0..v^J1 for the plan.
[[nodiscard]] inline std::unique_ptr<MacroHierarchy> build_macro(const Setup& s, const ExpansionPlan& plan,
                                                                 const SpaceTimeGrid& g, const Iota& iota,
                                                                 int max_order = 6) {
    if (plan.regime() != s.regime) throw InvalidArgument("plan regime differs from the corrector regime");
    auto c = make_macro_constants(s.ec, s.tables.C, plan.J0, s.layer.I);
    auto h = std::make_unique<MacroHierarchy>(std::move(c), iota, g, max_order);
    for (int k = 0; k <= plan.J0; ++k) h->solve_u(static_cast<std::size_t>(k));
    for (int k = 0; k <= plan.J1; ++k) h->solve_v(static_cast<std::size_t>(k));
    return h;
}

// ---------------------------------------------------------- eps members ---

struct MemberResult {
    std::vector<double> u_phi;  ///< <u^eps, phi_k>
    double l2_diff = 0.0;       ///< || u^eps - E ||, when requested
    double mass_drift = 0.0;
    double max_abs = 0.0;
};

/// One u^eps solve along one environment path, with the phi functionals and
/// optionally the space-time L2 distance to an expansion.
[[nodiscard]] inline MemberResult run_member(const EpsProblem& p, const std::vector<TestFunction>& phis,
                                             ExpansionField* E = nullptr) {
    const auto fg = p.grid.as_grid();
    FunctionalAccumulator acc(fg, phis);
    std::vector<double> e(fg.nx);
    CompensatedSum l2;
    const double scale = std::pow(p.eps, p.alpha);
    auto run = solve_eps(p, [&](std::size_t n, std::span<const double> u) {
        acc.add(n, u);
        // The corrector layer forms on the time scale eps^2, far below dt, so
        // the t = 0 slice (no layer yet) is excluded: right-endpoint rule.
        if (E && n > 0) {
            E->evaluate(n, p.path.at(fg.t(n) / scale), e);
            double s = 0.0;
            for (std::size_t i = 0; i < e.size(); ++i) s += (u[i] - e[i]) * (u[i] - e[i]);
            l2.add(s * fg.dx() * fg.dt());
        }
    });
    return {acc.values(), std::sqrt(l2.value()), run.max_mass_drift, run.max_abs};
}

/// <E, phi_k> for a deterministic expansion on the fine grid.
[[nodiscard]] inline std::vector<double> expansion_functionals(ExpansionField& E,
                                                               const std::vector<TestFunction>& phis) {
    if (E.random()) throw InvalidArgument("expansion depends on the environment path; pair it per member");
    const auto fg = E.grid().as_grid();
    FunctionalAccumulator acc(fg, phis);
    std::vector<double> e(fg.nx);
    for (std::size_t n = 0; n <= fg.nt; ++n) {
        E.evaluate(n, 0.0, e);
        acc.add(n, e);
    }
    return acc.values();
}

[[nodiscard]] inline EpsProblem make_problem(const Setup& s, double eps, double alpha, const FineGrid& g,
                                             const Iota& iota, std::uint64_t seed, double dt_scaling = 1.0) {
    EpsProblem p;
    p.eps = eps;
    p.alpha = alpha;
    p.coef = s.coef;
    p.iota = iota;
    p.grid = g;
    p.dt_scaling = dt_scaling;
    p.path = sample_problem_path(s.model, p, seed);
    return p;
}

// ------------------------------------------------------------------ law ---

struct LawPhiReport {
    std::string phi;
    double E_phi = 0.0;
    stats::Summary q;
    stats::Interval var_ci;
    double predicted = 0.0;          ///< operative Lambda
    double predicted_q = 0.0;        ///< super: q-weighted Lambda
    double predicted_sigma = 0.0;    ///< super: sigma-weighted Lambda
    stats::KSResult ks;              ///< against N(0, predicted)
    stats::KSResult ks_shape;        ///< against N(sample mean, sample variance); shape only
    bool q_inside = false;           ///< super: q-weighted prediction inside the variance CI
    bool sigma_inside = false;       ///< super: sigma-weighted prediction inside the variance CI
    double mean_z = 0.0;             ///< mean / standard error
    double var_rel_err = 0.0;        ///< |sample / predicted - 1|
    double unit_variance = 0.0;      ///< limit variance per unit Lambda
    stats::Interval implied_lambda;  ///< variance CI divided by unit_variance
    bool degenerate = false;         ///< predicted variance vanishes (symmetry)
};

struct LawReport {
    double eps = 0.0, alpha = 0.0;
    std::size_t n_paths = 0;
    double lambda = 0.0, lambda_q = 0.0, lambda_sigma = 0.0;
    std::vector<LawPhiReport> per_phi;
    std::vector<std::vector<double>> q_phi;  ///< [path][phi]
    double max_mass_drift = 0.0;
};

struct LawOptions {
    double eps = 0.05;
    std::size_t n_paths = 400;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    double dt_scaling = 1.0;
    double budget = std::numeric_limits<double>::infinity();
};

[[nodiscard]] inline LawReport run_law(const Setup& s, const ExpansionPlan& plan, const MacroHierarchy& h,
                                       const Iota& iota, const std::vector<TestFunction>& phis, const LawOptions& o) {
    const auto adv = resolution_advice(o.eps, plan.alpha, h.grid(), o.budget / static_cast<double>(o.n_paths),
                                       o.dt_scaling);
    ExpansionField E(plan.terms, h, s.cs, o.eps, adv.grid);
    const auto E_phi = expansion_functionals(E, phis);
    LawReport r;
    r.eps = o.eps;
    r.alpha = plan.alpha;
    r.n_paths = o.n_paths;
    r.q_phi.assign(o.n_paths, {});
    std::vector<double> drift(o.n_paths, 0.0);
    const double norm = std::pow(o.eps, -plan.alpha / 2.0);
    parallel_for(o.n_paths, o.threads, [&](std::size_t i) {
        const auto p = make_problem(s, o.eps, plan.alpha, adv.grid, iota, task_seed(o.seed, 11, i), o.dt_scaling);
        const auto m = run_member(p, phis);
        std::vector<double> q(phis.size());
        for (std::size_t k = 0; k < phis.size(); ++k) q[k] = norm * (m.u_phi[k] - E_phi[k]);
        r.q_phi[i] = std::move(q);
        drift[i] = m.mass_drift;
    });
    for (double d : drift) r.max_mass_drift = std::max(r.max_mass_drift, d);
    if (s.regime == Regime::sub) {
        r.lambda = s.ec.lambda_total;
    } else {
        r.lambda = s.ec.lambda_total;
        r.lambda_q = s.ec.lambda_q;
        r.lambda_sigma = s.ec.lambda_sigma;
    }
    for (std::size_t k = 0; k < phis.size(); ++k) {
        LawPhiReport pr;
        pr.phi = phis[k].name;
        pr.E_phi = E_phi[k];
        std::vector<double> x;
        for (const auto& row : r.q_phi) x.push_back(row[k]);
        pr.q = stats::summarize(x);
        pr.var_ci = stats::variance_ci(pr.q);
        const LimitSPDE spde{s.ec.a_eff, 1.0, &h.u(0)};
        const double unit = q0_variance(spde, phis[k]);
        pr.unit_variance = unit;
        if (unit > 0.0) pr.implied_lambda = {pr.var_ci.lo / unit, pr.var_ci.hi / unit};
        pr.predicted = r.lambda * unit;
        pr.predicted_q = r.lambda_q * unit;
        pr.predicted_sigma = r.lambda_sigma * unit;
        pr.mean_z = pr.q.se() > 0 ? pr.q.mean / pr.q.se() : 0.0;
        if (pr.q.variance > 0.0) pr.ks_shape = stats::ks_normal(x, pr.q.mean, pr.q.sd());
        pr.q_inside = pr.var_ci.contains(pr.predicted_q);
        pr.sigma_inside = pr.var_ci.contains(pr.predicted_sigma);
        pr.degenerate = !(pr.predicted > 1e-20);
        if (!pr.degenerate) {
            pr.var_rel_err = std::abs(pr.q.variance / pr.predicted - 1.0);
            pr.ks = stats::ks_normal(x, 0.0, std::sqrt(pr.predicted));
        }
        r.per_phi.push_back(std::move(pr));
    }
    return r;
}

// ----------------------------------------------------------------- rate ---

struct RateRow {
    double eps = 0.0;
    std::vector<double> norm;       ///< ||u^eps - E|| per seed
    std::vector<double> scaled;     ///< eps^{-alpha/2} ||u^eps - E|| per seed
    double scaled_rms = 0.0;
    double plain_rms = 0.0;         ///< ||u^eps - u^0|| (rms over seeds)
};

struct RateReport {
    double alpha = 0.0;
    bool full_expansion = false;
    std::vector<RateRow> rows;
    std::vector<double> ratios;     ///< consecutive scaled_rms ratios
    stats::LinearFit order;         ///< log ||u - E|| against log eps
    stats::LinearFit plain_order;   ///< log ||u - u^0|| against log eps
};

struct RateOptions {
    std::vector<double> ladder{0.2, 0.141, 0.1, 0.071, 0.05};
    std::size_t n_seeds = 8;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    bool full_expansion = false;  ///< the corrector-layer expansion instead of the theorem's
    double dt_scaling = 1.0;
    double budget = std::numeric_limits<double>::infinity();
};

[[nodiscard]] inline RateReport run_rate(const Setup& s, const ExpansionPlan& plan, const MacroHierarchy& h,
                                         const Iota& iota, const RateOptions& o) {
    RateReport r;
    r.alpha = plan.alpha;
    r.full_expansion = o.full_expansion;
    const auto terms = o.full_expansion ? plan.full_terms() : plan.terms;
    const std::vector<PlanTerm> lead{plan.terms.front()};
    // Budget guard before any solve.
    double total = 0.0;
    for (double eps : o.ladder) total += resolution_advice(eps, plan.alpha, h.grid(), o.budget, o.dt_scaling).node_steps;
    if (total * static_cast<double>(o.n_seeds) > o.budget)
        throw Unaffordable("rate ladder needs " + std::to_string(total * static_cast<double>(o.n_seeds)) +
                           " node-steps, budget is " + std::to_string(o.budget));
    for (std::size_t e = 0; e < o.ladder.size(); ++e) {
        const double eps = o.ladder[e];
        const auto adv = resolution_advice(eps, plan.alpha, h.grid(), o.budget, o.dt_scaling);
        RateRow row;
        row.eps = eps;
        row.norm.assign(o.n_seeds, 0.0);
        std::vector<double> plain(o.n_seeds, 0.0);
        parallel_for(o.n_seeds, o.threads, [&](std::size_t i) {
            const auto p = make_problem(s, eps, plan.alpha, adv.grid, iota, task_seed(o.seed, 13 + e, i), o.dt_scaling);
            ExpansionField E(terms, h, s.cs, eps, adv.grid);
            ExpansionField U0(lead, h, s.cs, eps, adv.grid);
            // Two distances from one solve: stream both expansions.
            const auto fg = adv.grid.as_grid();
            std::vector<double> ev(fg.nx), uv(fg.nx);
            CompensatedSum a2, b2;
            const double scale = std::pow(eps, plan.alpha);
            (void)solve_eps(p, [&](std::size_t n, std::span<const double> u) {
                if (n == 0) return;
                const double xi = p.path.at(fg.t(n) / scale);
                E.evaluate(n, xi, ev);
                U0.evaluate(n, xi, uv);
                double sa = 0.0, sb = 0.0;
                for (std::size_t k = 0; k < u.size(); ++k) {
                    sa += (u[k] - ev[k]) * (u[k] - ev[k]);
                    sb += (u[k] - uv[k]) * (u[k] - uv[k]);
                }
                a2.add(sa * fg.dx() * fg.dt());
                b2.add(sb * fg.dx() * fg.dt());
            });
            row.norm[i] = std::sqrt(a2.value());
            plain[i] = std::sqrt(b2.value());
        });
        const double pre = std::pow(eps, -plan.alpha / 2.0);
        double ss = 0.0, sp = 0.0;
        for (std::size_t i = 0; i < o.n_seeds; ++i) {
            row.scaled.push_back(pre * row.norm[i]);
            ss += row.norm[i] * row.norm[i];
            sp += plain[i] * plain[i];
        }
        row.scaled_rms = pre * std::sqrt(ss / static_cast<double>(o.n_seeds));
        row.plain_rms = std::sqrt(sp / static_cast<double>(o.n_seeds));
        r.rows.push_back(std::move(row));
    }
    std::vector<double> x, y, yp;
    for (std::size_t e = 0; e < r.rows.size(); ++e) {
        x.push_back(r.rows[e].eps);
        y.push_back(r.rows[e].scaled_rms / std::pow(r.rows[e].eps, -plan.alpha / 2.0));
        yp.push_back(r.rows[e].plain_rms);
        if (e > 0) r.ratios.push_back(r.rows[e].scaled_rms / r.rows[e - 1].scaled_rms);
    }
    if (x.size() >= 2) {
        r.order = stats::loglog_fit(x, y);
        r.plain_order = stats::loglog_fit(x, yp);
    }
    return r;
}

// ----------------------------------------------------------- invariance ---

struct InvarianceReport {
    double lambda_g = 0.0;  ///< quadrature value
    std::vector<double> times;
    std::vector<VarianceEstimate> at_t;   ///< at eps_main
    stats::LinearFit slope;               ///< variance against t
    double eps_main = 0.0, eps_other = 0.0;
    VarianceEstimate other;               ///< at eps_other, t = 1
    double eps_ratio = 0.0;               ///< var(eps_other) / var(eps_main) at t = 1
};

struct InvarianceOptions2 {
    double eps = 0.05;
    double eps_other = 0.1;
    double alpha = 1.5;
    std::vector<double> times{0.5, 1.0, 2.0};
    std::size_t n_paths = 1000;
    std::uint64_t seed = 1;
    double env_dt = 0.02;
};

[[nodiscard]] inline InvarianceReport run_invariance(const DiffusionModel& model, const std::function<double(double)>& g,
                                                     const InvarianceOptions2& o) {
    InvarianceReport r;
    const auto& yg = model.y_grid();
    Profile gp(yg.size());
    for (std::size_t j = 0; j < yg.size(); ++j) gp[j] = g(yg.node(j));
    r.lambda_g = model.clt_variance(gp);
    r.times = o.times;
    r.eps_main = o.eps;
    r.eps_other = o.eps_other;
    const auto rows = invariance_samples(model, g, o.eps, o.alpha, o.times, o.n_paths, {o.env_dt, o.seed});
    std::vector<double> vt;
    for (std::size_t k = 0; k < o.times.size(); ++k) {
        std::vector<double> x;
        for (const auto& row : rows) x.push_back(row[k]);
        const auto s = stats::summarize(x);
        VarianceEstimate v{s.n, s.mean, s.variance, {}};
        if (s.n >= 2) v.ci = stats::variance_ci(s);
        r.at_t.push_back(v);
        vt.push_back(s.variance);
    }
    if (o.times.size() >= 2) {
        // Variance is proportional to t: fit through the origin-free affine model.
        r.slope = stats::linear_fit(o.times, vt);
    }
    r.other = invariance_variance(model, g, o.eps_other, o.alpha, 1.0, o.n_paths, {o.env_dt, task_seed(o.seed, 3, 0)});
    const auto main1 = invariance_variance(model, g, o.eps, o.alpha, 1.0, o.n_paths, {o.env_dt, task_seed(o.seed, 3, 1)});
    r.eps_ratio = main1.variance > 0.0 ? r.other.variance / main1.variance : 0.0;
    return r;
}

// ---------------------------------------------------------------- audit ---

struct AuditRow {
    std::string regime;
    Residual r;
};

struct AuditReport {
    std::vector<AuditRow> rows;
    [[nodiscard]] bool ok() const {
        return std::all_of(rows.begin(), rows.end(), [](const AuditRow& a) { return a.r.ok(); });
    }
};

struct AuditOptions {
    SetupOptions setup;
    double tolerance = 1e-6;
    double z_tolerance = 1e-8;
    int z_max_l = 3;
    SpaceTimeGrid z_grid{-18.0, 18.0, 401, 0.5, 40};
};

/// Residual rows for one prepared setup: cell problems, drift chain, the Z
/// identity and, in the super regime, solvability of f^0 and I_0, I_1.
[[nodiscard]] inline std::vector<AuditRow> audit_setup(const Setup& s, const AuditOptions& o) {
    std::vector<AuditRow> out;
    const std::string tag = to_string(s.regime);
    for (auto& r : audit_residuals(s.cs, s.cf, s.model, o.tolerance)) out.push_back({tag, std::move(r)});
    const auto U = build_U(s.model, s.pq, s.triples);
    for (auto& r : audit_drift(s.cf, s.cs.abar, s.ec.a_eff, s.model, s.pq, &U, o.tolerance))
        out.push_back({tag, std::move(r)});
    // The Z identity needs u^j up to l + shift.
    const int shift = s.regime == Regime::super ? 1 : 2;
    const int depth = o.z_max_l + shift;
    MacroHierarchy h(make_macro_constants(s.ec, s.tables.C, depth), Iota::gaussian(), o.z_grid);
    for (int j = 0; j <= depth; ++j) h.solve_u(static_cast<std::size_t>(j));
    for (int l = 0; l <= o.z_max_l; ++l)
        out.push_back({tag, {"Z^" + std::to_string(l) + " + sum w~ = 0", z_identity_residual(s.tables, h, l), o.z_tolerance}});
    if (s.regime == Regime::super) {
        out.push_back({tag, {"<f^0> = 0 (solvability)", std::abs(s.ec.solvability_f0), o.tolerance}});
        out.push_back({tag, {"I_0 = 1", std::abs(s.layer.I.at(0) - 1.0), 1e-300}});
        out.push_back({tag, {"I_1 = 0", std::abs(s.layer.I.at(1)), 1e-300}});
    }
    return out;
}

[[nodiscard]] inline AuditReport run_audit(const DiffusionModel& model, const Coefficient& coef, const AuditOptions& o) {
    AuditReport rep;
    for (Regime r : {Regime::sub, Regime::super}) {
        const auto s = build_setup(model, coef, r, o.setup);
        auto rows = audit_setup(*s, o);
        rep.rows.insert(rep.rows.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
    }
    return rep;
}

}  // namespace homoscale

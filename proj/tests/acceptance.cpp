// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "homoscale/experiments.hpp"

using namespace homoscale;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string f(const char* fmt, double v) {
    char b[64];
    std::snprintf(b, sizeof b, fmt, v);
    return b;
}

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

DiffusionModel ou() { return DiffusionModel::ou(1.0, std::numbers::sqrt2); }

// abar = 2 + 0.5 sin(2 pi z): the reference product coefficient has constant
// abar, which empties the initial layer and both super Lambda candidates.
Coefficient layered() { return Coefficient(2.0, {{ZBasis::sin, 1, 0, 0.5}, {ZBasis::sin, 1, 1, 1.0}}); }

const SpaceTimeGrid kLawGrid{-18.0, 18.0, 1201, 0.5, 1000};

// Cached so criteria 1 and 5 share one audit.
const AuditReport& reference_audit() {
    static const AuditReport rep = [] {
        AuditOptions o;
        o.setup.nz = 256;
        o.setup.initial_layer_depth = 2;
        return run_audit(DiffusionModel::ou(1.0, std::numbers::sqrt2, YWindow{8.0, 256}), Coefficient::product(), o);
    }();
    return rep;
}

Outcome c1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& rep = reference_audit();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::size_t n = 0, bad = 0;
    double worst = 0.0;
    std::string first;
    for (const auto& r : rep.rows) {
        if (r.r.equation.rfind("Z^", 0) == 0) continue;
        ++n;
        if (r.r.tolerance > 1e-100) worst = std::max(worst, r.r.value);
        if (!r.r.ok() && bad++ == 0) first = r.regime + " " + r.r.equation + " = " + f("%.3g", r.r.value);
    }
    const bool fast = secs < 60.0;
    std::string d = std::to_string(n) + " equations, worst " + f("%.2e", worst) + ", " + f("%.1f s", secs);
    if (bad) d += "; " + std::to_string(bad) + " above tolerance, first: " + first;
    return {bad == 0 && fast, d};
}

Outcome c2() {
    double worst = 0.0, sqrt3 = std::sqrt(3.0);
    bool exact = true;
    for (Regime r : {Regime::sub, Regime::super}) {
        const auto zs = build_setup(ou(), Coefficient::z_only(), r);
        worst = std::max(worst, std::abs(zs->ec.a_eff - sqrt3));
        for (double c : {1.0, 1.7, 0.3}) {
            const auto cs = build_setup(ou(), Coefficient::constant(c), r);
            exact = exact && cs->ec.a_eff == c;
        }
    }
    return {worst < 1e-10 && exact,
            "|a_eff - sqrt 3| = " + f("%.2e", worst) + ", constants " + (exact ? "exact" : "NOT exact")};
}

Outcome c3() {
    const auto t0 = std::chrono::steady_clock::now();
    InvarianceOptions2 o;
    o.eps = 0.05;
    o.times = {1.0};
    o.n_paths = 1000;
    const auto r = run_invariance(ou(), [](double y) { return y; }, o);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& e = r.at_t.front();
    const bool quad = std::abs(r.lambda_g - 2.0) < 1e-8;
    const bool mc = e.ci.contains(2.0);
    return {quad && mc && secs < 120.0,
            "Lambda_g = " + f("%.10f", r.lambda_g) + ", MC var " + f("%.4f", e.variance) + " CI [" +
                f("%.4f", e.ci.lo) + ", " + f("%.4f", e.ci.hi) + "], " + f("%.1f s", secs)};
}

Outcome c4() {
    const auto model = ou();
    double chi = 0.0, super_l = 0.0, sub_l = 0.0, kappa0 = 0.0;
    {
        const auto cf = sample(Coefficient::y_only(), TorusGrid(64), model.y_grid());
        const auto sub = build_sub_cascade(cf, model, 3);
        for (const auto& c : sub.chi_sub) chi = std::max(chi, max_abs(c));
        const auto sup = build_super_cascade(cf, model, 3);
        for (const auto& c : sup.chi) chi = std::max(chi, max_abs(c));
        super_l = std::abs(effective_constants(sup, cf, model).lambda_total);
    }
    {
        const auto cf = sample(Coefficient::z_only(), TorusGrid(64), model.y_grid());
        sub_l = std::abs(effective_constants(build_sub_cascade(cf, model, 3), cf, model).lambda_total);
        kappa0 = max_abs(build_super_cascade(cf, model, 3).kappa.at(0));
    }
    const double worst = std::max({chi, super_l, sub_l, kappa0});
    return {worst < 1e-10, "y-only: max|chi| " + f("%.1e", chi) + ", super Lambda " + f("%.1e", super_l) +
                               "; z-only: sub Lambda " + f("%.1e", sub_l) + ", max|kappa^0| " + f("%.1e", kappa0)};
}

Outcome c5() {
    double worst = 0.0;
    std::size_t n = 0;
    bool ok = true;
    for (const auto& r : reference_audit().rows) {
        if (r.r.equation.rfind("Z^", 0) != 0) continue;
        ++n;
        worst = std::max(worst, r.r.value);
        ok = ok && r.r.value < 1e-8;
    }
    return {ok && n == 8, std::to_string(n) + " identities (l <= 3, both regimes), worst " + f("%.2e", worst)};
}

Outcome c6() {
    const auto model = ou();
    const auto cf = sample(layered(), TorusGrid(64), model.y_grid());
    const auto cs = build_super_cascade(cf, model, 3);
    const auto coarse = initial_layer_constants(cs, 3, {2e-4});
    const auto fine = initial_layer_constants(cs, 3, {1e-4});
    const auto fit = fit_log_decay(fine.flows.at(0));
    const bool exact = fine.I.at(0) == 1.0 && fine.I.at(1) == 0.0;
    const double drift = std::abs(coarse.I.at(2) - fine.I.at(2));
    return {fit.slope < 0.0 && fit.r2 > 0.99 && exact && drift < 1e-6,
            "slope " + f("%.4f", fit.slope) + ", R^2 " + f("%.6f", fit.r2) + ", I_0/I_1 " +
                (exact ? "exact" : "inexact") + ", I_2 = " + f("%.8f", fine.I.at(2)) + " (dt-halving change " +
                f("%.1e", drift) + ")"};
}

Outcome c7() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = build_setup(ou(), Coefficient::z_only(), Regime::sub);
    const auto plan = exponents(1.0);
    const auto h = build_macro(*s, plan, kLawGrid, Iota::gaussian());
    RateOptions o;
    o.n_seeds = 1;
    o.full_expansion = true;
    o.threads = workers();
    const auto r = run_rate(*s, plan, *h, Iota::gaussian(), o);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string norms;
    for (const auto& row : r.rows) norms += f("%.3g ", row.norm.front());
    return {std::abs(r.order.slope - 1.0) <= 0.3 && secs < 600.0,
            "order " + f("%.3f", r.order.slope) + " (R^2 " + f("%.4f", r.order.r2) + "), norms " + norms +
                "| without the corrector layer: order " + f("%.3f", r.plain_order.slope) + f(" | %.0f s", secs)};
}

Outcome c8() {
    const auto s = build_setup(ou(), Coefficient::product(), Regime::sub);
    const auto plan = exponents(1.0);
    const auto h = build_macro(*s, plan, kLawGrid, Iota::gaussian());
    RateOptions o;
    o.n_seeds = 8;
    o.threads = workers();
    const auto r = run_rate(*s, plan, *h, Iota::gaussian(), o);
    bool ok = !r.ratios.empty();
    std::string d = "scaled rms ";
    for (const auto& row : r.rows) d += f("%.4g ", row.scaled_rms);
    d += "| ratios ";
    for (double q : r.ratios) {
        ok = ok && q >= 0.5 && q <= 2.0;
        d += f("%.3f ", q);
    }
    return {ok, d};
}

Outcome c9() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = build_setup(ou(), Coefficient::product(), Regime::sub);
    const auto plan = exponents(1.0);
    const auto h = build_macro(*s, plan, kLawGrid, Iota::gaussian());
    LawOptions o;
    o.eps = 0.05;
    o.n_paths = 400;
    o.threads = workers();
    const auto r = run_law(*s, plan, *h, Iota::gaussian(), default_phi_dictionary(), o);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = secs < 3600.0;
    std::string d;
    for (const auto& p : r.per_phi) {
        if (p.degenerate) continue;
        const bool pass = std::abs(p.mean_z) <= 3.0 && p.var_rel_err <= 0.2 && p.ks.p_value > 0.01;
        ok = ok && pass;
        d += p.phi + ": mean/SE " + f("%.2f", p.mean_z) + ", var/limit " + f("%.3f", p.q.variance / p.predicted) +
             ", KS p " + f("%.3g", p.ks.p_value) + " (shape-only " + f("%.2g", p.ks_shape.p_value) + "); ";
    }
    d += f("%.0f s; finite-eps corroboration only, the eps -> 0 limit in law is not reproducible numerically", secs);
    return {ok, d};
}

Outcome c10() {
    const auto s = build_setup(ou(), layered(), Regime::super);
    const auto plan = exponents(3.0);
    const SpaceTimeGrid m{-15.0, 15.0, 601, 0.25, 250};
    const auto h = build_macro(*s, plan, m, Iota::gaussian());
    LawOptions o;
    o.eps = 0.05;
    o.n_paths = 400;
    o.threads = workers();
    const auto r = run_law(*s, plan, *h, Iota::gaussian(), default_phi_dictionary(), o);
    // Context only: the frozen-environment constant for the same coefficient.
    const double lambda_sub = build_setup(ou(), layered(), Regime::sub)->ec.lambda_total;
    std::set<std::string> verdicts;
    std::string d;
    for (const auto& p : r.per_phi) {
        if (p.degenerate) continue;
        const std::string v = p.q_inside && p.sigma_inside ? "tie"
                              : p.q_inside                 ? "q-weighted"
                              : p.sigma_inside             ? "sigma-weighted"
                                                           : "none";
        verdicts.insert(v);
        d += p.phi + ": var " + f("%.4g", p.q.variance) + " CI [" + f("%.4g", p.var_ci.lo) + ", " +
             f("%.4g", p.var_ci.hi) + "], q " + f("%.4g", p.predicted_q) + ", sigma " + f("%.4g", p.predicted_sigma) +
             " -> " + v + "; implied Lambda [" + f("%.4g", p.implied_lambda.lo) + ", " +
             f("%.4g", p.implied_lambda.hi) + "]; ";
    }
    d += "Lambda q " + f("%.4g", r.lambda_q) + ", sigma " + f("%.4g", r.lambda_sigma) + ", frozen-environment " +
         f("%.4g", lambda_sub);
    // One consistent flag across the test functions; "tie" is the documented alternative.
    const bool ok = verdicts.size() == 1 && !verdicts.count("none");
    return {ok, d};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
        {"corrector residual suite", c1},     {"closed-form effective coefficient", c2},
        {"CLT variance oracle", c3},          {"zero-limit degeneracies", c4},
        {"Z cancellation identity", c5},      {"initial-layer decay", c6},
        {"deterministic homogenization rate", c7}, {"normalization boundedness", c8},
        {"law test at alpha = 1", c9},        {"Lambda-variant arbitration at alpha = 3", c10}};
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::stoi(argv[i]));
    bool all_pass = true;
    for (std::size_t k = 0; k < all.size(); ++k) {
        const int id = static_cast<int>(k + 1);
        if (!pick.empty() && !pick.count(id)) continue;
        Outcome o;
        try {
            o = all[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all_pass = all_pass && o.pass;
        std::printf("C%-2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", all[k].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return all_pass ? 0 : 1;
}

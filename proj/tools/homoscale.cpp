#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "homoscale/config.hpp"
#include "homoscale/experiments.hpp"
#include "homoscale/report.hpp"

namespace fs = std::filesystem;
using namespace homoscale;
using nlohmann::json;

namespace {

enum Exit { kPass = 0, kFail = 1, kConfig = 2, kBudget = 3 };

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<unsigned> threads;
    std::optional<double> alpha;
};

double budget_from_env() {
    const char* b = std::getenv("HOMOSCALE_BUDGET");
    if (!b || !*b) return std::numeric_limits<double>::infinity();
    char* end = nullptr;
    const double v = std::strtod(b, &end);
    if (end == b || *end != '\0' || !(v > 0.0)) throw ConfigError(std::string("HOMOSCALE_BUDGET must be a positive number, got ") + b);
    return v;
}

ExperimentConfig load(const Globals& g) {
    ExperimentConfig c = g.config_path.empty() ? parse_config(json::object()) : load_config(g.config_path);
    if (g.seed) c.seed = *g.seed;
    if (g.out) c.output = *g.out;
    if (g.threads) c.threads = *g.threads;
    if (g.alpha) {
        c.expansion.alpha = *g.alpha;
        c.source["expansion"]["alpha"] = *g.alpha;
        try {
            (void)c.plan();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    return c;
}

RunSummary start(const std::string& id, const ExperimentConfig& c) {
    RunSummary s;
    s.experiment = id;
    s.seed = c.seed;
    s.config = c.source;
    s.hash = config_hash(c.source, c.seed);
    return s;
}

int finish(const RunSummary& s, const ExperimentConfig& c) {
    s.write(c.output);
    for (const auto& v : s.verdicts)
        std::printf("[%s] %-4s %s: %s\n", v.pass ? "PASS" : "FAIL", v.criterion.c_str(), v.name.c_str(), v.detail.c_str());
    std::printf("summary: %s\n", (fs::path(c.output) / (s.experiment + ".json")).string().c_str());
    return s.all_pass() ? kPass : kFail;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ------------------------------------------------------------------ commands

int cmd_audit(const ExperimentConfig& c) {
    auto s = start("audit", c);
    AuditOptions o;
    o.setup = c.correctors.setup;
    o.setup.initial_layer_depth = std::max(o.setup.initial_layer_depth, 2);
    o.tolerance = c.correctors.audit_tolerance;
    const auto rep = run_audit(c.model(), c.coef(), o);
    CsvTable t({"regime", "equation", "value", "tolerance", "ok"}, s.hash);
    std::size_t bad = 0;
    std::string first_bad;
    for (const auto& r : rep.rows) {
        t.row({r.regime, "\"" + r.r.equation + "\"", fmt_double(r.r.value), fmt_double(r.r.tolerance),
               r.r.ok() ? "1" : "0"});
        if (!r.r.ok()) {
            if (bad++ == 0) first_bad = r.regime + ": " + r.r.equation;
        }
    }
    t.write(fs::path(c.output) / "audit_residuals.csv");
    double worst = 0.0;
    for (const auto& r : rep.rows) worst = std::max(worst, r.r.value / r.r.tolerance);
    s.results["rows"] = rep.rows.size();
    s.results["worst_value_over_tolerance"] = worst;
    s.verdicts.push_back({"C1", "residual suite", bad == 0,
                          bad == 0 ? std::to_string(rep.rows.size()) + " residuals below tolerance"
                                   : std::to_string(bad) + " above tolerance, first: " + first_bad});
    return finish(s, c);
}

int cmd_effective(const ExperimentConfig& c) {
    auto s = start("effective", c);
    CsvTable t({"regime", "name", "index", "value"}, s.hash);
    bool bounds_ok = true;
    for (Regime r : {Regime::sub, Regime::super}) {
        auto opt = c.correctors.setup;
        if (r == Regime::super) opt.initial_layer_depth = std::max(opt.initial_layer_depth, 3);
        const auto st = build_setup(c.model(), c.coef(), r, opt);
        const auto& ec = st->ec;
        const std::string tag = to_string(r);
        json j;
        j["a_eff"] = ec.a_eff;
        j["a_k_eff"] = ec.a_k_eff;
        j["lambda"] = ec.lambda_total;
        j["harmonic_bound"] = ec.harmonic_bound;
        j["arithmetic_bound"] = ec.arithmetic_bound;
        t.row({tag, "a_eff", "0", fmt_double(ec.a_eff)});
        for (std::size_t k = 0; k < ec.a_k_eff.size(); ++k) t.row({tag, "a_k_eff", std::to_string(k + 1), fmt_double(ec.a_k_eff[k])});
        t.row({tag, "lambda", "0", fmt_double(ec.lambda_total)});
        if (r == Regime::sub) {
            j["lambda_k"] = ec.lambda_k;
            for (std::size_t k = 0; k < ec.lambda_k.size(); ++k) t.row({tag, "lambda_k", std::to_string(k), fmt_double(ec.lambda_k[k])});
        } else {
            j["ua_k_eff"] = ec.ua_k_eff;
            j["lambda_q"] = ec.lambda_q;
            j["lambda_sigma"] = ec.lambda_sigma;
            j["solvability_f0"] = ec.solvability_f0;
            j["I"] = st->layer.I;
            for (std::size_t k = 0; k < ec.ua_k_eff.size(); ++k) t.row({tag, "ua_k_eff", std::to_string(k + 1), fmt_double(ec.ua_k_eff[k])});
            t.row({tag, "lambda_q", "0", fmt_double(ec.lambda_q)});
            t.row({tag, "lambda_sigma", "0", fmt_double(ec.lambda_sigma)});
            for (std::size_t k = 0; k < st->layer.I.size(); ++k) t.row({tag, "I", std::to_string(k), fmt_double(st->layer.I[k])});
        }
        j["C"] = st->tables.C;
        for (std::size_t l = 0; l < st->tables.C.size(); ++l)
            for (std::size_t m = 0; m < st->tables.C[l].size(); ++m)
                t.row({tag, "C", std::to_string(l) + ":" + std::to_string(m), fmt_double(st->tables.C[l][m])});
        s.results[tag] = j;
        const double tol = 1e-12 * ec.arithmetic_bound;
        bounds_ok = bounds_ok && ec.harmonic_bound - tol <= ec.a_eff && ec.a_eff <= ec.arithmetic_bound + tol;
    }
    t.write(fs::path(c.output) / "effective.csv");
    s.verdicts.push_back({"bounds", "harmonic <= a_eff <= arithmetic", bounds_ok, bounds_ok ? "both regimes" : "violated"});
    return finish(s, c);
}

struct Pipeline {
    std::unique_ptr<Setup> setup;
    ExpansionPlan plan;
    std::unique_ptr<MacroHierarchy> macro;
};

Pipeline pipeline(const ExperimentConfig& c) {
    Pipeline p;
    p.plan = c.plan();
    for (const auto& w : p.plan.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    auto opt = c.correctors.setup;
    if (p.plan.regime() == Regime::super) opt.initial_layer_depth = std::max(opt.initial_layer_depth, 2);
    p.setup = build_setup(c.model(), c.coef(), p.plan.regime(), opt);
    p.macro = build_macro(*p.setup, p.plan, c.macro.grid, c.iota());
    return p;
}

int cmd_rate(const ExperimentConfig& c, double budget) {
    auto s = start("rate", c);
    const auto p = pipeline(c);
    RateOptions o;
    o.ladder = c.eps.ladder;
    o.n_seeds = c.rate.n_seeds;
    o.seed = c.seed;
    o.threads = c.threads;
    o.full_expansion = c.rate.full_expansion;
    o.dt_scaling = c.eps.dt_scaling;
    o.budget = budget;
    const auto r = run_rate(*p.setup, p.plan, *p.macro, c.iota(), o);
    CsvTable t({"eps", "seed_index", "l2_norm", "scaled"}, s.hash);
    json rows = json::array();
    for (const auto& row : r.rows) {
        for (std::size_t i = 0; i < row.norm.size(); ++i)
            t.row({fmt_double(row.eps), std::to_string(i), fmt_double(row.norm[i]), fmt_double(row.scaled[i])});
        rows.push_back({{"eps", row.eps}, {"scaled_rms", row.scaled_rms}, {"plain_rms", row.plain_rms}});
    }
    t.write(fs::path(c.output) / "rate.csv");
    s.results["rows"] = rows;
    s.results["ratios"] = r.ratios;
    s.results["order"] = {{"slope", r.order.slope}, {"r2", r.order.r2}};
    s.results["order_without_corrector"] = {{"slope", r.plain_order.slope}, {"r2", r.plain_order.r2}};
    if (c.coef().y_independent()) {
        const bool ok = std::abs(r.order.slope - 1.0) <= 0.3;
        s.verdicts.push_back({"C7", "deterministic rate order 1.0 +- 0.3", ok,
                              "order " + fmt("%.3f", r.order.slope) + " (R^2 " + fmt("%.4f", r.order.r2) +
                                  "); without corrector layer " + fmt("%.3f", r.plain_order.slope)});
    } else {
        bool ok = !r.ratios.empty();
        std::string d;
        for (double q : r.ratios) {
            ok = ok && q >= 0.5 && q <= 2.0;
            d += fmt("%.3f ", q);
        }
        s.verdicts.push_back({"C8", "eps^{-alpha/2} ||u - E|| bounded along the ladder", ok, "ratios " + d});
    }
    return finish(s, c);
}

int cmd_law(const ExperimentConfig& c, double budget) {
    auto s = start("law", c);
    const auto p = pipeline(c);
    LawOptions o;
    o.eps = c.eps.ladder.back();
    o.n_paths = c.law.n_paths;
    o.seed = c.seed;
    o.threads = c.threads;
    o.dt_scaling = c.eps.dt_scaling;
    o.budget = budget;
    const auto r = run_law(*p.setup, p.plan, *p.macro, c.iota(), c.law.phi_dictionary, o);
    {
        std::vector<std::string> header{"path"};
        for (const auto& phi : c.law.phi_dictionary) header.push_back("q_" + phi.name);
        CsvTable t(header, s.hash);
        for (std::size_t i = 0; i < r.q_phi.size(); ++i) {
            std::vector<std::string> row{std::to_string(i)};
            for (double v : r.q_phi[i]) row.push_back(fmt_double(v));
            t.row(row);
        }
        t.write(fs::path(c.output) / "law_samples.csv");
    }
    CsvTable hist({"phi", "bin_lo", "bin_hi", "count"}, s.hash);
    json per = json::array();
    const bool super = p.plan.regime() == Regime::super;
    for (std::size_t k = 0; k < r.per_phi.size(); ++k) {
        const auto& f = r.per_phi[k];
        per.push_back({{"phi", f.phi}, {"E_phi", f.E_phi}, {"mean", f.q.mean}, {"se", f.q.se()},
                       {"variance", f.q.variance}, {"var_ci", {f.var_ci.lo, f.var_ci.hi}},
                       {"predicted", f.predicted}, {"predicted_q", f.predicted_q},
                       {"predicted_sigma", f.predicted_sigma}, {"ks_p", f.ks.p_value},
                       {"ks_shape_p", f.ks_shape.p_value}, {"degenerate", f.degenerate}});
        std::vector<double> x;
        for (const auto& row : r.q_phi) x.push_back(row[k]);
        const double sd = std::max(f.q.sd(), 1e-300);
        const auto h = stats::histogram(x, f.q.mean - 4 * sd, f.q.mean + 4 * sd, 20);
        for (std::size_t b = 0; b < h.size(); ++b) {
            const double lo = f.q.mean - 4 * sd + 8 * sd * static_cast<double>(b) / 20.0;
            hist.row({f.phi, fmt_double(lo), fmt_double(lo + 0.4 * sd), std::to_string(h[b])});
        }
        if (f.degenerate) continue;
        if (!super) {
            s.verdicts.push_back({"C9", f.phi + " mean within 3 SE", std::abs(f.mean_z) <= 3.0,
                                  "mean/SE = " + fmt("%.2f", f.mean_z)});
            s.verdicts.push_back({"C9", f.phi + " variance within " + fmt("%.0f%%", 100 * c.law.var_tolerance),
                                  f.var_rel_err <= c.law.var_tolerance,
                                  "sample " + fmt("%.4g", f.q.variance) + " vs limit " + fmt("%.4g", f.predicted) +
                                      " (ratio " + fmt("%.3f", f.q.variance / f.predicted) + ")"});
            s.verdicts.push_back({"C9", f.phi + " KS vs Gaussian limit", f.ks.p_value > c.law.ks_level,
                                  "p = " + fmt("%.3g", f.ks.p_value) + " (shape-only p = " +
                                      fmt("%.3g", f.ks_shape.p_value) + ")"});
        } else {
            const int flagged = static_cast<int>(f.q_inside) + static_cast<int>(f.sigma_inside);
            std::string which = flagged == 0 ? "none" : flagged == 2 ? "tie" : f.q_inside ? "q-weighted" : "sigma-weighted";
            s.verdicts.push_back({"C10", f.phi + " Lambda arbitration", flagged >= 1,
                                  "flagged " + which + "; CI [" + fmt("%.4g", f.var_ci.lo) + ", " +
                                      fmt("%.4g", f.var_ci.hi) + "], q " + fmt("%.4g", f.predicted_q) + ", sigma " +
                                      fmt("%.4g", f.predicted_sigma)});
        }
    }
    hist.write(fs::path(c.output) / "law_histogram.csv");
    s.results["eps"] = r.eps;
    s.results["alpha"] = r.alpha;
    s.results["n_paths"] = r.n_paths;
    s.results["lambda"] = r.lambda;
    if (super) s.results["lambda_variants"] = {{"q", r.lambda_q}, {"sigma", r.lambda_sigma}};
    s.results["per_phi"] = per;
    s.results["max_mass_drift"] = r.max_mass_drift;
    s.results["note"] = "finite-eps corroboration only; the eps -> 0 limit in law is not reproducible numerically";
    return finish(s, c);
}

std::function<double(double)> profile(const std::string& name) {
    if (name == "zero") return [](double) { return 0.0; };
    if (name == "tanh") return [](double y) { return std::tanh(y); };
    return [](double y) { return y; };
}

int cmd_invariance(const ExperimentConfig& c) {
    auto s = start("invariance", c);
    const auto& v = c.invariance;
    InvarianceOptions2 o;
    o.eps = v.eps;
    o.eps_other = v.eps_other;
    o.alpha = v.alpha;
    o.times = v.times;
    o.n_paths = v.n_paths;
    o.seed = c.seed;
    o.env_dt = v.env_dt;
    const auto model = c.model();
    const auto r = run_invariance(model, profile(v.profile), o);
    CsvTable t({"eps", "t", "n", "mean", "variance", "ci_lo", "ci_hi"}, s.hash);
    for (std::size_t k = 0; k < r.times.size(); ++k)
        t.row({fmt_double(v.eps), fmt_double(r.times[k]), std::to_string(r.at_t[k].n), fmt_double(r.at_t[k].mean),
               fmt_double(r.at_t[k].variance), fmt_double(r.at_t[k].ci.lo), fmt_double(r.at_t[k].ci.hi)});
    t.row({fmt_double(v.eps_other), "1", std::to_string(r.other.n), fmt_double(r.other.mean),
           fmt_double(r.other.variance), fmt_double(r.other.ci.lo), fmt_double(r.other.ci.hi)});
    t.write(fs::path(c.output) / "invariance.csv");
    s.results["lambda_g"] = r.lambda_g;
    s.results["slope"] = r.slope.slope;
    s.results["eps_ratio"] = r.eps_ratio;
    if (v.profile == "zero") {
        bool zero = r.lambda_g == 0.0;
        for (const auto& e : r.at_t) zero = zero && e.variance == 0.0;
        s.verdicts.push_back({"C3", "zero profile gives zero", zero, zero ? "all zero" : "nonzero"});
        return finish(s, c);
    }
    const auto it = std::find(r.times.begin(), r.times.end(), 1.0);
    // g = y under OU(theta, sigma0): Lambda_g = sigma0^2 / theta^2.
    double exact = r.lambda_g;
    if (v.profile == "y" && model.is_ou()) {
        const auto& ouP = std::get<OUParams>(model.dynamics());
        exact = ouP.sigma0 * ouP.sigma0 / (ouP.theta * ouP.theta);
        s.verdicts.push_back({"C3", "Lambda_g quadrature", std::abs(r.lambda_g - exact) < 1e-8,
                              fmt("%.12f", r.lambda_g) + " vs " + fmt("%.12f", exact)});
    }
    if (it != r.times.end()) {
        const auto& e = r.at_t[static_cast<std::size_t>(it - r.times.begin())];
        s.verdicts.push_back({"C3", "Monte-Carlo variance CI contains Lambda_g", e.ci.contains(exact),
                              fmt("%.4f", e.variance) + " in [" + fmt("%.4f", e.ci.lo) + ", " + fmt("%.4f", e.ci.hi) + "]"});
    }
    if (r.times.size() >= 2)
        s.verdicts.push_back({"C3", "slope in t within 10%", std::abs(r.slope.slope / exact - 1.0) <= 0.1,
                              "slope " + fmt("%.4f", r.slope.slope)});
    s.verdicts.push_back({"C3", "eps-independence ratio 1 +- 0.15", std::abs(r.eps_ratio - 1.0) <= 0.15,
                          "ratio " + fmt("%.4f", r.eps_ratio)});
    return finish(s, c);
}

int cmd_report(const std::vector<std::string>& files, const std::string& out) {
    std::vector<json> runs;
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) throw ConfigError("cannot open summary " + f);
        try {
            runs.push_back(json::parse(in));
        } catch (const json::parse_error& e) {
            throw ConfigError(f + ": " + e.what());
        }
    }
    const auto merged = merge_summaries(runs);
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "report.json", std::ios::binary) << merged.dump(2) << '\n';
    for (const auto& r : merged["runs"])
        for (const auto& v : r["verdicts"])
            std::printf("[%s] %-4s %s: %s\n", v["pass"].get<bool>() ? "PASS" : "FAIL",
                        v["criterion"].get<std::string>().c_str(), v["name"].get<std::string>().c_str(),
                        v["detail"].get<std::string>().c_str());
    return merged["pass"].get<bool>() ? kPass : kFail;
}

int cmd_advise(const ExperimentConfig& c, double budget, std::size_t members) {
    const double alpha = c.expansion.alpha;
    std::printf("%-8s %6s %6s %8s %8s %14s\n", "eps", "rx", "rt", "nx", "nt", "node-steps");
    double total = 0.0;
    for (double eps : c.eps.ladder) {
        const auto a = resolution_advice(eps, alpha, c.macro.grid, std::numeric_limits<double>::infinity(),
                                         c.eps.dt_scaling);
        std::printf("%-8.4g %6zu %6zu %8zu %8zu %14.4g\n", eps, a.grid.rx, a.grid.rt, a.grid.nx(), a.grid.nt(),
                    a.node_steps);
        total += a.node_steps;
    }
    total *= static_cast<double>(members);
    std::printf("total for %zu member(s) per eps: %.4g node-steps (budget %.4g)\n", members, total, budget);
    if (total > budget) throw Unaffordable("ladder exceeds the budget");
    return kPass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"homoscale: homogenization experiments in a random environment"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "root seed (overrides config)");
    app.add_option("--out", g.out, "output directory (overrides config)");
    app.add_option("--threads", g.threads, "worker threads (overrides config)")->check(CLI::PositiveNumber);
    app.add_option("--alpha", g.alpha, "environment time-scale exponent (overrides config)");

    auto* audit = app.add_subcommand("audit", "corrector and drift-chain residual audit");
    auto* eff = app.add_subcommand("effective", "effective constants in both regimes");
    auto* rate = app.add_subcommand("rate", "||u^eps - E^eps|| along the eps ladder");
    auto* law = app.add_subcommand("law", "Monte-Carlo law of <q^eps, phi> at the smallest eps");
    auto* inv = app.add_subcommand("invariance", "invariance-principle variance check");
    auto* rep = app.add_subcommand("report", "merge JSON run summaries");
    std::vector<std::string> files;
    rep->add_option("summaries", files, "summary JSON files")->required()->check(CLI::ExistingFile);
    auto* adv = app.add_subcommand("advise", "resolution and cost of the eps ladder");
    std::size_t members = 1;
    adv->add_option("--members", members, "solves per eps (seeds or paths)");
    app.fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfig;
    }

    try {
        const double budget = budget_from_env();
        if (rep->parsed()) return cmd_report(files, g.out.value_or("out"));
        const auto c = load(g);
        if (audit->parsed()) return cmd_audit(c);
        if (eff->parsed()) return cmd_effective(c);
        if (rate->parsed()) return cmd_rate(c, budget);
        if (law->parsed()) return cmd_law(c, budget);
        if (inv->parsed()) return cmd_invariance(c);
        if (adv->parsed()) return cmd_advise(c, budget, members);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kConfig;
    } catch (const Unaffordable& e) {
        std::fprintf(stderr, "budget abort: %s\n", e.what());
        return kBudget;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFail;
    }
    return kFail;
}

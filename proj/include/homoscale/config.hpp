#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "homoscale/coefficient.hpp"
#include "homoscale/environment.hpp"
#include "homoscale/errors.hpp"
#include "homoscale/experiments.hpp"
#include "homoscale/expansion.hpp"
#include "homoscale/macro_pde.hpp"

namespace homoscale {

using json = nlohmann::json;

struct EnvironmentConfig {
    double theta = 1.0;
    double sigma0 = std::numbers::sqrt2;
    double y_half_width = 8.0;
    std::size_t y_points = 256;
};

struct TermConfig {
    std::string basis = "sin";
    int k = 1;
    int tanh_power = 1;
    double amp = 1.0;
};

struct CoefficientConfig {
    std::string preset = "product";  ///< product | z_only | y_only | constant | custom
    double base = 2.0;
    double amp = 1.0;
    std::vector<TermConfig> terms;   ///< custom only
};

struct ExpansionConfig {
    double alpha = 1.0;
    bool include_u1 = true;
    std::optional<int> j0_override;
};

struct EpsConfig {
    std::vector<double> ladder{0.2, 0.141, 0.1, 0.071, 0.05};
    double dt_scaling = 1.0;
};

struct MacroConfig {
    SpaceTimeGrid grid;
    std::string iota = "gaussian";  ///< gaussian | bump
    double iota_param = 1.0;        ///< s0 or radius
};

struct CorrectorConfig {
    SetupOptions setup;
    double audit_tolerance = 1e-6;
};

struct LawConfig {
    std::vector<TestFunction> phi_dictionary = default_phi_dictionary();
    std::size_t n_paths = 400;
    double ks_level = 0.01;
    double var_tolerance = 0.2;
};

struct RateConfig {
    std::size_t n_seeds = 8;
    bool full_expansion = false;
};

struct InvarianceConfig {
    std::string profile = "y";  ///< y | tanh | zero
    double eps = 0.05;
    double eps_other = 0.1;
    double alpha = 1.5;
    std::vector<double> times{0.5, 1.0, 2.0};
    std::size_t n_paths = 1000;
    double env_dt = 0.02;
};

struct ExperimentConfig {
    EnvironmentConfig environment;
    CoefficientConfig coefficient;
    ExpansionConfig expansion;
    EpsConfig eps;
    MacroConfig macro;
    CorrectorConfig correctors;
    LawConfig law;
    RateConfig rate;
    InvarianceConfig invariance;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string output = "out";
    json source = json::object();  ///< the document as read, for hashing

    [[nodiscard]] DiffusionModel model() const {
        return DiffusionModel::ou(environment.theta, environment.sigma0,
                                  YWindow{environment.y_half_width, environment.y_points});
    }
    [[nodiscard]] Coefficient coef() const;
    [[nodiscard]] Iota iota() const {
        return macro.iota == "bump" ? Iota::bump(macro.iota_param) : Iota::gaussian(macro.iota_param);
    }
    [[nodiscard]] ExpansionPlan plan() const {
        ExpansionOptions o;
        o.include_u1 = expansion.include_u1;
        o.j0_override = expansion.j0_override;
        return exponents(expansion.alpha, o);
    }
};

namespace detail {

/// Reads a section, rejecting keys outside `allowed`.
class Section {
public:
    Section(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_ + " must be an object");
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!allowed.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
    }

    template <class T>
    void get(const char* key, T& out) const {
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }
    [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }
    [[nodiscard]] const json& at(const char* key) const { return j_.at(key); }
    [[nodiscard]] std::string path(const char* key) const { return path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
};

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

inline ZBasis parse_basis(const std::string& s) {
    if (s == "one") return ZBasis::one;
    if (s == "cos") return ZBasis::cos;
    if (s == "sin") return ZBasis::sin;
    throw ConfigError("coefficient term basis must be one, cos or sin, got " + s);
}

}  // namespace detail

inline Coefficient ExperimentConfig::coef() const {
    const auto& c = coefficient;
    try {
        if (c.preset == "product") return Coefficient::product(c.base, c.amp);
        if (c.preset == "z_only") return Coefficient::z_only(c.base, c.amp);
        if (c.preset == "y_only") return Coefficient::y_only(c.base, c.amp);
        if (c.preset == "constant") return Coefficient::constant(c.base);
        std::vector<SeparableTerm> t;
        for (const auto& x : c.terms) t.push_back({detail::parse_basis(x.basis), x.k, x.tanh_power, x.amp});
        return Coefficient(c.base, std::move(t));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("coefficient: ") + e.what());
    }
}

[[nodiscard]] inline ExperimentConfig parse_config(const json& j) {
    using detail::require;
    using detail::Section;
    ExperimentConfig c;
    c.source = j;
    Section top(j, "config",
                {"environment", "coefficient", "expansion", "eps", "macro", "correctors", "law", "rate", "invariance",
                 "seed", "threads", "output"});
    top.get("seed", c.seed);
    top.get("threads", c.threads);
    top.get("output", c.output);

    if (top.has("environment")) {
        Section s(top.at("environment"), "environment", {"model", "theta", "sigma0", "y_half_width", "y_points"});
        std::string model = "ou";
        s.get("model", model);
        require(model == "ou", "environment.model must be \"ou\"");
        s.get("theta", c.environment.theta);
        s.get("sigma0", c.environment.sigma0);
        s.get("y_half_width", c.environment.y_half_width);
        s.get("y_points", c.environment.y_points);
        require(c.environment.theta > 0 && c.environment.sigma0 > 0, "environment: theta and sigma0 must be positive");
        require(c.environment.y_points >= 16, "environment.y_points must be at least 16");
    }
    if (top.has("coefficient")) {
        Section s(top.at("coefficient"), "coefficient", {"preset", "base", "amp", "terms"});
        s.get("preset", c.coefficient.preset);
        s.get("base", c.coefficient.base);
        s.get("amp", c.coefficient.amp);
        const std::set<std::string> presets{"product", "z_only", "y_only", "constant", "custom"};
        require(presets.count(c.coefficient.preset) > 0, "coefficient.preset: unknown preset " + c.coefficient.preset);
        if (s.has("terms")) {
            require(c.coefficient.preset == "custom", "coefficient.terms needs preset \"custom\"");
            require(s.at("terms").is_array(), "coefficient.terms must be an array");
            for (const auto& tj : s.at("terms")) {
                Section t(tj, "coefficient.terms[]", {"basis", "k", "tanh_power", "amp"});
                TermConfig tc;
                t.get("basis", tc.basis);
                t.get("k", tc.k);
                t.get("tanh_power", tc.tanh_power);
                t.get("amp", tc.amp);
                c.coefficient.terms.push_back(tc);
            }
        }
    }
    if (top.has("expansion")) {
        Section s(top.at("expansion"), "expansion", {"alpha", "include_u1", "j0_override"});
        s.get("alpha", c.expansion.alpha);
        s.get("include_u1", c.expansion.include_u1);
        if (s.has("j0_override") && !s.at("j0_override").is_null()) {
            int v = 0;
            s.get("j0_override", v);
            c.expansion.j0_override = v;
        }
    }
    if (top.has("eps")) {
        Section s(top.at("eps"), "eps", {"ladder", "dt_scaling"});
        s.get("ladder", c.eps.ladder);
        s.get("dt_scaling", c.eps.dt_scaling);
        require(!c.eps.ladder.empty(), "eps.ladder must not be empty");
        for (double e : c.eps.ladder) require(e >= 0.02 && e <= 0.5, "eps.ladder entries must lie in [0.02, 0.5]");
        require(std::is_sorted(c.eps.ladder.rbegin(), c.eps.ladder.rend()), "eps.ladder must be decreasing");
        require(c.eps.dt_scaling > 0 && c.eps.dt_scaling <= 1, "eps.dt_scaling must lie in (0, 1]");
    }
    if (top.has("macro")) {
        Section s(top.at("macro"), "macro", {"x_min", "x_max", "nx", "T", "nt", "iota", "iota_param"});
        s.get("x_min", c.macro.grid.x_min);
        s.get("x_max", c.macro.grid.x_max);
        s.get("nx", c.macro.grid.nx);
        s.get("T", c.macro.grid.T);
        s.get("nt", c.macro.grid.nt);
        s.get("iota", c.macro.iota);
        s.get("iota_param", c.macro.iota_param);
        require(c.macro.iota == "gaussian" || c.macro.iota == "bump", "macro.iota must be gaussian or bump");
        require(c.macro.iota_param > 0, "macro.iota_param must be positive");
        try {
            c.macro.grid.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("macro: ") + e.what());
        }
    }
    if (top.has("correctors")) {
        Section s(top.at("correctors"), "correctors",
                  {"nz", "sub_depth", "super_depth", "pq_depth", "triple_power", "initial_layer_depth", "wiring",
                   "layer_dt", "audit_tolerance"});
        auto& o = c.correctors.setup;
        s.get("nz", o.nz);
        s.get("sub_depth", o.sub_depth);
        s.get("super_depth", o.super_depth);
        s.get("pq_depth", o.pq_depth);
        s.get("triple_power", o.triple_power);
        s.get("initial_layer_depth", o.initial_layer_depth);
        s.get("layer_dt", o.layer.dt);
        s.get("audit_tolerance", c.correctors.audit_tolerance);
        std::string w = "kappa0";
        s.get("wiring", w);
        require(w == "kappa0" || w == "kappa1", "correctors.wiring must be kappa0 or kappa1");
        o.wiring = w == "kappa0" ? LeadingWiring::kappa0 : LeadingWiring::kappa1;
        require(o.nz >= 8 && o.nz % 2 == 0, "correctors.nz must be even and at least 8");
    }
    if (top.has("law")) {
        Section s(top.at("law"), "law", {"phi_dictionary", "n_paths", "ks_level", "var_tolerance"});
        s.get("n_paths", c.law.n_paths);
        s.get("ks_level", c.law.ks_level);
        s.get("var_tolerance", c.law.var_tolerance);
        require(c.law.n_paths >= 2, "law.n_paths must be at least 2");
        require(c.law.ks_level > 0 && c.law.ks_level < 1, "law.ks_level must lie in (0, 1)");
        if (s.has("phi_dictionary")) {
            require(s.at("phi_dictionary").is_array(), "law.phi_dictionary must be an array");
            c.law.phi_dictionary.clear();
            for (const auto& pj : s.at("phi_dictionary")) {
                Section p(pj, "law.phi_dictionary[]", {"kind", "center", "width", "name"});
                std::string kind = "gaussian", name;
                double center = 0.0, width = 1.0;
                p.get("kind", kind);
                p.get("center", center);
                p.get("width", width);
                p.get("name", name);
                require(kind == "gaussian" || kind == "odd", "phi kind must be gaussian or odd");
                require(width > 0, "phi width must be positive");
                if (name.empty()) name = kind + std::to_string(c.law.phi_dictionary.size());
                c.law.phi_dictionary.push_back(kind == "gaussian" ? TestFunction::gaussian(center, width, name)
                                                                  : TestFunction::odd(center, width, name));
            }
            require(!c.law.phi_dictionary.empty(), "law.phi_dictionary must not be empty");
        }
    }
    if (top.has("rate")) {
        Section s(top.at("rate"), "rate", {"n_seeds", "full_expansion"});
        s.get("n_seeds", c.rate.n_seeds);
        s.get("full_expansion", c.rate.full_expansion);
        require(c.rate.n_seeds >= 1, "rate.n_seeds must be at least 1");
    }
    if (top.has("invariance")) {
        Section s(top.at("invariance"), "invariance",
                  {"profile", "eps", "eps_other", "alpha", "times", "n_paths", "env_dt"});
        auto& v = c.invariance;
        s.get("profile", v.profile);
        s.get("eps", v.eps);
        s.get("eps_other", v.eps_other);
        s.get("alpha", v.alpha);
        s.get("times", v.times);
        s.get("n_paths", v.n_paths);
        s.get("env_dt", v.env_dt);
        require(v.profile == "y" || v.profile == "tanh" || v.profile == "zero",
                "invariance.profile must be y, tanh or zero");
        require(v.eps > 0 && v.eps_other > 0 && v.alpha > 0 && v.env_dt > 0,
                "invariance: eps, eps_other, alpha and env_dt must be positive");
        require(v.n_paths >= 2, "invariance.n_paths must be at least 2");
    }
    require(c.threads >= 1, "threads must be at least 1");
    // Cross-section checks that would otherwise surface deep inside a run.
    try {
        (void)c.plan();
        (void)c.coef();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return c;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return parse_config(j);
}

}  // namespace homoscale

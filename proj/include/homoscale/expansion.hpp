#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "homoscale/cell_problems.hpp"
#include "homoscale/errors.hpp"
#include "homoscale/fft.hpp"
#include "homoscale/macro_pde.hpp"
#include "homoscale/oscillatory.hpp"

namespace homoscale {

enum class AlphaCase { sub, super_low, critical, super_high };

inline const char* to_string(AlphaCase c) {
    switch (c) {
        case AlphaCase::sub: return "sub";
        case AlphaCase::super_low: return "super_low";
        case AlphaCase::critical: return "critical";
        default: return "super_high";
    }
}

/// One term eps^power * [chi(x/eps, xi)] * d_x^deriv (macro function).
struct PlanTerm {
    enum class Kind { u, v, chi_dv, chi_du };
    Kind kind = Kind::u;
    int k = 0;      ///< superscript of the macro function
    int chi = -1;   ///< corrector index, -1 for none
    int deriv = 0;  ///< x-derivative order on the macro function
    double power = 0.0;
    std::string label;
};

struct ExpansionOptions {
    std::optional<int> j0_override;
    bool include_u1 = true;
};

struct ExpansionPlan {
    double alpha = 1.0;
    double delta = 1.0;
    int J0 = 1, J1 = 0, N0 = 4;
    AlphaCase alpha_case = AlphaCase::sub;
    bool include_u1 = true;
    std::vector<PlanTerm> terms;
    std::vector<std::string> warnings;

    [[nodiscard]] Regime regime() const { return alpha < 2.0 ? Regime::sub : Regime::super; }

    /// Sub regime: u^k plus the chi^j(x/eps, xi) d_x u^k layer at eps^{k delta + j delta + 1},
    /// j <= J0 - k. Super regime: the theorem terms.
    [[nodiscard]] std::vector<PlanTerm> full_terms() const {
        if (regime() == Regime::super) return terms;
        std::vector<PlanTerm> out;
        for (int k = 0; k <= J0; ++k) {
            if (k == 1 && !include_u1) continue;
            out.push_back({PlanTerm::Kind::u, k, -1, 0, k * delta, "u^" + std::to_string(k)});
            for (int j = 0; j <= J0 - k; ++j)
                out.push_back({PlanTerm::Kind::chi_du, k, j, 1, k * delta + j * delta + 1.0,
                               "chi^" + std::to_string(j) + " d_x u^" + std::to_string(k)});
        }
        return out;
    }
};

[[nodiscard]] inline std::set<double> term_powers(std::span<const PlanTerm> terms) {
    std::set<double> s;
    for (const auto& t : terms) s.insert(std::round(t.power * 1e9) / 1e9);
    return s;
}

/// delta = |alpha - 2|, J0 = floor(alpha / (2 delta)) + 1, J1 = floor(alpha / 2),
/// N0 = 2 J0 + 2, with the check min(delta + 1, J1 + 1, delta J0) > alpha / 2.
[[nodiscard]] inline ExpansionPlan exponents(double alpha, const ExpansionOptions& opt = {}) {
    check_alpha(alpha);
    ExpansionPlan p;
    p.alpha = alpha;
    p.delta = std::abs(alpha - 2.0);
    p.J0 = static_cast<int>(std::floor(alpha / (2.0 * p.delta) + 1e-12)) + 1;
    p.J1 = static_cast<int>(std::floor(alpha / 2.0 + 1e-12));
    p.include_u1 = opt.include_u1;
    if (alpha < 2.0) p.alpha_case = AlphaCase::sub;
    else if (std::abs(alpha - 4.0) < 1e-12) p.alpha_case = AlphaCase::critical;
    else if (alpha < 4.0) p.alpha_case = AlphaCase::super_low;
    else p.alpha_case = AlphaCase::super_high;
    if (p.alpha_case == AlphaCase::critical)
        p.warnings.push_back("alpha = 4: using J0 = " + std::to_string(p.J0) +
                             " from the floor formula; the J0 = 1 reading violates min(delta+1, J1+1, delta*J0) > alpha/2");
    if (opt.j0_override) {
        if (*opt.j0_override < 1) throw InvalidArgument("J0 override must be >= 1");
        p.J0 = *opt.j0_override;
        p.warnings.push_back("J0 overridden to " + std::to_string(p.J0));
    }
    p.N0 = 2 * p.J0 + 2;
    const double lhs = std::min({p.delta + 1.0, p.J1 + 1.0, p.delta * p.J0});
    if (!(lhs > alpha / 2.0)) {
        const std::string msg = "min(delta+1, J1+1, delta*J0) = " + std::to_string(lhs) + " <= alpha/2 = " +
                                std::to_string(alpha / 2.0);
        if (!opt.j0_override) throw UnsupportedAlpha(msg);
        p.warnings.push_back(msg + " (accepted because J0 was overridden)");
    }
    p.terms.push_back({PlanTerm::Kind::u, 0, -1, 0, 0.0, "u^0"});
    for (int k = 1; k <= p.J0; ++k) {
        if (k == 1 && !p.include_u1) continue;
        p.terms.push_back({PlanTerm::Kind::u, k, -1, 0, k * p.delta, "u^" + std::to_string(k)});
    }
    for (int k = 1; k <= p.J1; ++k) {
        p.terms.push_back({PlanTerm::Kind::v, k, -1, 0, static_cast<double>(k), "v^" + std::to_string(k)});
        for (int l = 1; l <= k; ++l)
            p.terms.push_back({PlanTerm::Kind::chi_dv, k - l, l - 1, l, static_cast<double>(k),
                               "chi^" + std::to_string(l - 1) + " d_x^" + std::to_string(l) + " v^" +
                                   std::to_string(k - l)});
    }
    return p;
}

/// Highest derivative order any term of the plan needs.
[[nodiscard]] inline int required_derivative_order(std::span<const PlanTerm> terms) {
    int m = 0;
    for (const auto& t : terms) m = std::max(m, t.deriv);
    return m;
}

namespace detail {

/// chi(x/eps, y) on the fine nodes. z-only correctors are evaluated once;
/// y-dependent ones row by row on demand, linearly interpolated in y.
class Modulation {
public:
    Modulation(const TorusField& chi, const FineGrid& g, double eps) { rows_[0] = sample(chi.values(), g, eps); }
    Modulation(const ZYField& chi, const FineGrid& g, double eps) : chi_(chi), g_(g), eps_(eps) {
        double spread = 0.0;
        const auto r0 = chi.row_span(0);
        for (std::size_t j = 1; j < chi.ny(); ++j) {
            const auto rj = chi.row_span(j);
            for (std::size_t i = 0; i < rj.size(); ++i) spread = std::max(spread, std::abs(rj[i] - r0[i]));
        }
        if (spread <= 1e-13 * std::max(1.0, max_abs(chi))) {
            rows_[0] = sample(chi.row_span(chi.ny() / 2), g, eps);
            chi_.reset();
        }
    }

    [[nodiscard]] bool random() const { return chi_.has_value(); }

    /// Values at environment state y (ignored for z-only correctors).
    void apply(double y, std::span<const double> in, double c, std::span<double> out) {
        if (!chi_) {
            const auto& m = rows_.at(0);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * in[i] * m[i];
            return;
        }
        const YGrid& yg = chi_->y_grid();
        const auto nodes = yg.nodes();
        double u = (y - nodes.front()) / yg.spacing();
        u = std::clamp(u, 0.0, static_cast<double>(nodes.size() - 1));
        const auto j = std::min(static_cast<std::size_t>(u), nodes.size() - 2);
        const double f = u - static_cast<double>(j);
        const auto& a = row(j);
        const auto& b = row(j + 1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * in[i] * ((1.0 - f) * a[i] + f * b[i]);
    }

private:
    static std::vector<double> sample(std::span<const double> periodic, const FineGrid& g, double eps) {
        fft::Interpolant I(periodic, 1.0);
        std::vector<double> v(g.nx());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double z = g.x(i) / eps;
            v[i] = I(z - std::floor(z));
        }
        return v;
    }
    const std::vector<double>& row(std::size_t j) {
        auto it = rows_.find(j);
        if (it == rows_.end()) it = rows_.emplace(j, sample(chi_->row_span(j), g_, eps_)).first;
        return it->second;
    }

    std::optional<ZYField> chi_;
    FineGrid g_;
    double eps_ = 1.0;
    std::map<std::size_t, std::vector<double>> rows_;
};

}  // namespace detail

/// Lazily evaluated expansion on the fine grid. Macro slices are upsampled
/// spectrally and interpolated linearly in time between macro steps.
class ExpansionField {
public:
    ExpansionField(std::vector<PlanTerm> terms, const MacroHierarchy& h, const CorrectorSet& cs, double eps,
                   FineGrid fg)
        : terms_(std::move(terms)), h_(&h), eps_(eps), g_(std::move(fg)) {
        if (!(h.grid() == g_.macro)) throw GridMismatch("expansion: macro grid differs from the fine grid's base");
        for (const auto& t : terms_) {
            const auto k = static_cast<std::size_t>(t.k);
            const bool is_u = t.kind == PlanTerm::Kind::u || t.kind == PlanTerm::Kind::chi_du;
            if (is_u && k >= h.solved_u()) throw MissingIngredient("expansion needs u^" + std::to_string(t.k));
            if (!is_u && k >= h.solved_v()) throw MissingIngredient("expansion needs v^" + std::to_string(t.k));
            const MacroSolution& src = is_u ? h.u(k) : h.v(k);
            if (t.deriv > src.max_order())
                throw DerivativeOrderExceeded("term " + t.label + " needs order " + std::to_string(t.deriv));
            std::optional<detail::Modulation> mod;
            if (t.chi >= 0) {
                const auto j = static_cast<std::size_t>(t.chi);
                if (cs.regime == Regime::sub) {
                    if (j >= cs.chi_sub.size()) throw MissingIngredient("expansion needs chi^" + std::to_string(t.chi));
                    mod.emplace(cs.chi_sub[j], g_, eps_);
                } else {
                    if (j >= cs.chi.size()) throw MissingIngredient("expansion needs chi^" + std::to_string(t.chi));
                    mod.emplace(cs.chi[j], g_, eps_);
                }
            }
            random_ = random_ || (mod && mod->random());
            sources_.push_back(&src);
            mods_.push_back(std::move(mod));
            coef_.push_back(std::pow(eps_, t.power));
        }
    }

    [[nodiscard]] const std::vector<PlanTerm>& terms() const noexcept { return terms_; }
    [[nodiscard]] const FineGrid& grid() const noexcept { return g_; }
    /// True when some corrector depends on the environment state.
    [[nodiscard]] bool random() const noexcept { return random_; }

    /// E at fine step n; xi is the environment state at that time.
    void evaluate(std::size_t n, double xi, std::span<double> out) {
        if (out.size() != g_.nx()) throw GridMismatch("expansion output has the wrong size");
        const std::size_t m0 = n / g_.rt;
        const double th = static_cast<double>(n % g_.rt) / static_cast<double>(g_.rt);
        // Load both slices before taking references: loading may evict.
        if (th > 0.0) load(m0 + 1, m0);
        load(m0, th > 0.0 ? m0 + 1 : m0);
        const auto& A = cached(m0);
        const std::vector<std::vector<double>>* B = th > 0.0 ? &cached(m0 + 1) : nullptr;
        std::fill(out.begin(), out.end(), 0.0);
        tmp_.resize(out.size());
        for (std::size_t t = 0; t < terms_.size(); ++t) {
            const auto& a = A[t];
            if (B) {
                const auto& b = (*B)[t];
                for (std::size_t i = 0; i < tmp_.size(); ++i) tmp_[i] = (1.0 - th) * a[i] + th * b[i];
            } else {
                std::copy(a.begin(), a.end(), tmp_.begin());
            }
            if (mods_[t]) {
                mods_[t]->apply(xi, tmp_, coef_[t], out);
            } else {
                for (std::size_t i = 0; i < out.size(); ++i) out[i] += coef_[t] * tmp_[i];
            }
        }
    }

private:
    /// Ensures slice m is cached, evicting anything but `keep`.
    void load(std::size_t m, std::size_t keep) {
        for (auto& c : cache_)
            if (c.first == m) return;
        std::vector<std::vector<double>> per;
        for (std::size_t t = 0; t < terms_.size(); ++t) per.push_back(fine_values(*sources_[t], terms_[t].deriv, m));
        if (cache_.size() == 2) cache_.erase(cache_[0].first == keep ? cache_.begin() + 1 : cache_.begin());
        cache_.emplace_back(m, std::move(per));
    }
    [[nodiscard]] const std::vector<std::vector<double>>& cached(std::size_t m) const {
        for (const auto& c : cache_)
            if (c.first == m) return c.second;
        throw InvalidArgument("expansion slice not loaded");
    }

    [[nodiscard]] std::vector<double> fine_values(const MacroSolution& s, int deriv, std::size_t m) const {
        const std::size_t nxm = g_.macro.nx;
        std::vector<double> base;
        if (deriv == 0) {
            const auto v = s.at(m);
            base.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nxm - 1));
        } else {
            auto d = s.derivative(deriv, m);
            d.resize(nxm - 1);
            base = std::move(d);
        }
        auto fine = fft::upsample(base, g_.rx);
        fine.push_back(fine.front());
        return fine;
    }

    std::vector<PlanTerm> terms_;
    const MacroHierarchy* h_;
    double eps_;
    FineGrid g_;
    std::vector<const MacroSolution*> sources_;
    std::vector<std::optional<detail::Modulation>> mods_;
    std::vector<double> coef_;
    bool random_ = false;
    std::vector<std::pair<std::size_t, std::vector<std::vector<double>>>> cache_;
    std::vector<double> tmp_;
};

/// q = eps^{-alpha/2} (u - E), pointwise.
[[nodiscard]] inline std::vector<double> q_eps(std::span<const double> u, std::span<const double> E, double alpha,
                                               double eps) {
    if (u.size() != E.size()) throw GridMismatch("q_eps: u has " + std::to_string(u.size()) + " nodes, E has " +
                                                 std::to_string(E.size()));
    const double s = std::pow(eps, -alpha / 2.0);
    std::vector<double> q(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) q[i] = s * (u[i] - E[i]);
    return q;
}

[[nodiscard]] inline MacroSolution q_eps(const MacroSolution& u, const MacroSolution& E, double alpha, double eps) {
    if (!(u.grid() == E.grid())) throw GridMismatch("q_eps: space-time grids differ");
    MacroSolution q(u.grid(), 0, "q_eps");
    for (std::size_t n = 0; n <= u.grid().nt; ++n) {
        const auto v = q_eps(u.at(n), E.at(n), alpha, eps);
        std::copy(v.begin(), v.end(), q.at(n).begin());
    }
    return q;
}

/// Test function phi(x), constant in t: Gaussian exp(-(x-c)^2/(2w)) or the odd
/// profile ((x-c)/sqrt(w)) exp(-(x-c)^2/(2w)).
struct TestFunction {
    enum class Kind { gaussian, odd };
    Kind kind = Kind::gaussian;
    double center = 0.0;
    double width = 1.0;
    std::string name = "gauss0";

    static TestFunction gaussian(double c, double w, std::string name) { return {Kind::gaussian, c, w, std::move(name)}; }
    static TestFunction odd(double c, double w, std::string name) { return {Kind::odd, c, w, std::move(name)}; }

    [[nodiscard]] double operator()(double x) const {
        const double d = x - center;
        const double g = std::exp(-d * d / (2.0 * width));
        return kind == Kind::gaussian ? g : d / std::sqrt(width) * g;
    }
};

/// The default dictionary: two Gaussians and one odd bump.
[[nodiscard]] inline std::vector<TestFunction> default_phi_dictionary() {
    return {TestFunction::gaussian(0.0, 1.0, "gauss0"), TestFunction::gaussian(1.0, 0.5, "gauss1"),
            TestFunction::odd(0.0, 1.0, "odd0")};
}

/// Trapezoid double integral of q * phi over the space-time grid.
[[nodiscard]] inline double functional(const MacroSolution& q, const TestFunction& phi) {
    const auto& g = q.grid();
    std::vector<double> ph(g.nx);
    for (std::size_t i = 0; i < g.nx; ++i) ph[i] = phi(g.x(i));
    std::vector<double> row(g.nt + 1);
    for (std::size_t n = 0; n <= g.nt; ++n) {
        const auto v = q.at(n);
        std::vector<double> prod(g.nx);
        for (std::size_t i = 0; i < g.nx; ++i) prod[i] = v[i] * ph[i];
        row[n] = quad::trapezoid(prod, g.dx());
    }
    return quad::trapezoid(row, g.dt());
}

/// Streaming version of `functional` for fields produced slice by slice.
class FunctionalAccumulator {
public:
    FunctionalAccumulator(const SpaceTimeGrid& g, const std::vector<TestFunction>& phis) : g_(g) {
        for (const auto& p : phis) {
            std::vector<double> v(g.nx);
            for (std::size_t i = 0; i < g.nx; ++i) v[i] = p(g.x(i));
            phi_.push_back(std::move(v));
        }
        acc_.assign(phis.size(), 0.0);
    }

    void add(std::size_t n, std::span<const double> u) {
        const double wt = (n == 0 || n == g_.nt) ? 0.5 * g_.dt() : g_.dt();
        for (std::size_t k = 0; k < phi_.size(); ++k) {
            const auto& p = phi_[k];
            double s = 0.5 * (u.front() * p.front() + u.back() * p.back());
            for (std::size_t i = 1; i + 1 < u.size(); ++i) s += u[i] * p[i];
            acc_[k] += wt * s * g_.dx();
        }
    }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return acc_; }

private:
    SpaceTimeGrid g_;
    std::vector<std::vector<double>> phi_;
    std::vector<double> acc_;
};

}  // namespace homoscale

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "homoscale/errors.hpp"
#include "homoscale/grid.hpp"

namespace homoscale {

enum class ZBasis { one, cos, sin };

/// amp * Z_k(z) * tanh(y)^power, with Z_k one of 1, cos(2 pi k z), sin(2 pi k z).
struct SeparableTerm {
    ZBasis z_basis = ZBasis::one;
    int k = 0;
    int tanh_power = 0;
    double amp = 0.0;

    [[nodiscard]] double z_part(double z) const {
        const double w = 2.0 * std::numbers::pi * k * z;
        switch (z_basis) {
            case ZBasis::cos: return std::cos(w);
            case ZBasis::sin: return std::sin(w);
            default: return 1.0;
        }
    }
    [[nodiscard]] double y_part(double y) const {
        return tanh_power == 0 ? 1.0 : std::pow(std::tanh(y), tanh_power);
    }
    [[nodiscard]] bool z_free() const { return z_basis == ZBasis::one || k == 0; }
    [[nodiscard]] bool y_free() const { return tanh_power == 0; }
};

/// Scalar coefficient a(z, y) = base + sum of separable terms.
class Coefficient {
public:
    Coefficient(double base, std::vector<SeparableTerm> terms, std::string name = "custom_fourier")
        : base_(base), terms_(std::move(terms)), name_(std::move(name)) {
        for (const auto& t : terms_) {
            if (t.k < 0) throw InvalidArgument("Fourier index must be nonnegative");
            if (t.tanh_power < 0) throw InvalidArgument("tanh power must be nonnegative");
            if (!std::isfinite(t.amp)) throw InvalidArgument("non-finite term amplitude");
        }
        // Cheap worst-case ellipticity check: |tanh| < 1, |Z_k| <= 1.
        double spread = 0.0;
        for (const auto& t : terms_) spread += std::abs(t.amp);
        if (!(base_ - spread > 0.0))
            throw InvalidArgument("coefficient is not uniformly elliptic: base " + std::to_string(base_) +
                                  " <= sum of |amplitudes| " + std::to_string(spread));
    }

    static Coefficient constant(double c) { return {c, {}, "const"}; }
    static Coefficient z_only(double base = 2.0, double amp = 1.0) {
        return {base, {{ZBasis::sin, 1, 0, amp}}, "z_only"};
    }
    static Coefficient y_only(double base = 2.0, double amp = 1.0) {
        return {base, {{ZBasis::one, 0, 1, amp}}, "y_only"};
    }
    /// The reference coefficient 2 + sin(2 pi z) tanh(y).
    static Coefficient product(double base = 2.0, double amp = 1.0) {
        return {base, {{ZBasis::sin, 1, 1, amp}}, "product"};
    }

    [[nodiscard]] double operator()(double z, double y) const {
        double s = base_;
        for (const auto& t : terms_) s += t.amp * t.z_part(z) * t.y_part(y);
        return s;
    }
    [[nodiscard]] double base() const noexcept { return base_; }
    [[nodiscard]] const std::vector<SeparableTerm>& terms() const noexcept { return terms_; }
    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] bool z_independent() const {
        return std::all_of(terms_.begin(), terms_.end(), [](const auto& t) { return t.z_free(); });
    }
    [[nodiscard]] bool y_independent() const {
        return std::all_of(terms_.begin(), terms_.end(), [](const auto& t) { return t.y_free(); });
    }
    /// Largest Fourier index; sampling grids must exceed twice this.
    [[nodiscard]] int max_mode() const {
        int m = 0;
        for (const auto& t : terms_) m = std::max(m, t.k);
        return m;
    }

private:
    double base_;
    std::vector<SeparableTerm> terms_;
    std::string name_;
};

/// Sampled coefficient with its ellipticity constant.
struct CoefficientField {
    ZYField a;
    double lambda = 1.0;
};

inline CoefficientField sample(const Coefficient& c, TorusGrid tg, const YGrid& yg) {
    if (2 * static_cast<std::size_t>(c.max_mode()) >= tg.size())
        throw InvalidArgument("torus grid does not resolve Fourier mode " + std::to_string(c.max_mode()));
    auto a = ZYField::sample(tg, yg, [&](double z, double y) { return c(z, y); });
    double lo = a.values()[0], hi = lo;
    for (double v : a.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(lo > 0.0)) throw InvalidArgument("sampled coefficient is not positive");
    return {std::move(a), std::max(hi, 1.0 / lo)};
}

}  // namespace homoscale

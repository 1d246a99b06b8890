// Prints the effective constants of a coefficient in both regimes.
#include <cmath>
#include <cstdio>
#include <numbers>

#include "homoscale/experiments.hpp"

using namespace homoscale;

int main() {
    const auto model = DiffusionModel::ou(1.0, std::numbers::sqrt2);
    const Coefficient a(2.0, {{ZBasis::sin, 1, 0, 0.5}, {ZBasis::sin, 1, 1, 1.0}}, "2 + sin(2 pi z)(0.5 + tanh y)");
    SetupOptions o;
    o.initial_layer_depth = 3;
    for (Regime r : {Regime::sub, Regime::super}) {
        const auto s = build_setup(model, a, r, o);
        std::printf("%-5s a_eff = %.10f  Lambda = %.6g", to_string(r), s->ec.a_eff, s->ec.lambda_total);
        if (r == Regime::super)
            std::printf("  (q-weighted %.6g, sigma-weighted %.6g, I_2 = %.6g)", s->ec.lambda_q, s->ec.lambda_sigma,
                        s->layer.I.at(2));
        std::printf("\n  bounds: harmonic %.6f <= a_eff <= arithmetic %.6f\n", s->ec.harmonic_bound,
                    s->ec.arithmetic_bound);
    }
    // Limit variance of <q, phi> per unit Lambda at alpha = 1.
    const auto s = build_setup(model, a, Regime::sub);
    const SpaceTimeGrid g{-15.0, 15.0, 601, 0.5, 200};
    const auto h = build_macro(*s, exponents(1.0), g, Iota::gaussian());
    for (const auto& phi : default_phi_dictionary())
        std::printf("Var <q0, %s> = %.6g\n", phi.name.c_str(),
                    q0_variance(LimitSPDE{s->ec.a_eff, s->ec.lambda_total, &h->u(0)}, phi));
}
